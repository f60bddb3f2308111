//! Tick-driven link engine.
//!
//! Each tick draws one turbulence and one pointing gain (block fading),
//! pushes the tick's bit budget through OOK modulation, the faded noisy
//! channel and detection, and hands complete bursts to the decoder. A burst
//! is one `FSO1` frame, FEC-encoded and interleaved; every burst has the
//! same on-air length, so the receiver delimits them by counting bits.
//! Once the source is drained the transmitter idles (all-zero filler that
//! still occupies the channel).

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, LinkPlan, ParamUpdate, ParamsInEffect, ScenarioConfig, ScheduledUpdate, SourceKind};
use crate::channel::{
    build_marginal_with, gg_quantile_table, path_loss, ChannelError, ChannelParams, FadingProcess, PointingGeometry,
    QuantileTable, DEFAULT_TABLE_RESOLUTION, MIN_GAIN,
};
use crate::fec_framing::{bits_to_bytes, bytes_to_bits, fec_decode, fec_encode, frame_pack, frame_unpack};
use crate::phy::{apply_channel, demodulate_ook, demodulate_ook_fixed, modulate_ook, Detection, PhyParams};
use crate::rng::{stream_rng, stream_seed, SimRng, Stream};
use crate::transport::{
    load_frame_sequence, psnr_bytes, segment, synthetic_frames, Db, Packet, Reassembler, ReceivedFrame, StreamKind,
    StreamLayout, TransportError, VideoFrame,
};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Source(#[from] TransportError),
    #[error("{}: {source}", path.display())]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl RuntimeError {
    /// Distinguishes invalid input from I/O failures.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Self::Config(ConfigError::Io { .. })
                | Self::Io { .. }
                | Self::Source(TransportError::Io { .. } | TransportError::Parse { .. } | TransportError::NoFrames(_))
        )
    }
}

/// Source content ready for transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceData {
    pub kind: StreamKind,
    /// `(width, height)` for raw frames.
    pub dims: Option<(usize, usize)>,
    pub frames: Vec<Vec<u8>>,
}

impl SourceData {
    pub fn load(config: &ScenarioConfig) -> Result<Self, RuntimeError> {
        Ok(match &config.source.kind {
            SourceKind::Pgm { path } => Self::from_video(load_frame_sequence(path)?),
            SourceKind::Synthetic { width, height, frames } => {
                Self::from_video(synthetic_frames(*width, *height, *frames))
            }
            SourceKind::Opaque { path } => {
                let bytes = std::fs::read(path).map_err(|source| RuntimeError::Io { path: path.clone(), source })?;
                Self { kind: StreamKind::Opaque, dims: None, frames: vec![bytes] }
            }
        })
    }

    pub fn from_video(frames: Vec<VideoFrame>) -> Self {
        let dims = frames.first().map(|f| (f.width(), f.height()));
        Self { kind: StreamKind::RawFrames, dims, frames: frames.into_iter().map(VideoFrame::into_pixels).collect() }
    }

    pub fn to_video(&self, bytes: &[u8]) -> Option<VideoFrame> {
        let (w, h) = self.dims?;
        VideoFrame::new(w, h, bytes.to_vec()).ok()
    }
}

/// One report interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Simulated seconds at the end of the interval.
    pub t: f64,
    pub h_mean: f64,
    pub h_min: f64,
    pub ber_pre_fec: f64,
    pub ber_post_fec: f64,
    pub packets_ok: u64,
    pub packets_lost: u64,
    pub frames_concealed: u64,
    /// Worst PSNR among frames completed in the interval; `null` if none
    /// completed.
    pub psnr_db: Option<Db>,
    pub params_in_effect: ParamsInEffect,
}

/// Final line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub duration: f64,
    pub ticks: u64,
    /// All bits pushed through the PHY, idle filler included.
    pub bits_pushed: u64,
    /// Coded bits of frame bursts.
    pub bits_sent: u64,
    pub bit_errors_pre_fec: u64,
    pub info_bits: u64,
    pub bit_errors_post_fec: u64,
    pub ber_pre_fec: f64,
    pub ber_post_fec: f64,
    /// Packets put on the air.
    pub packets_sent: u64,
    pub packets_lost: u64,
    /// Packets the run ended before transmitting (included in
    /// `packets_lost`).
    pub packets_unsent: u64,
    pub frames_total: u64,
    pub frames_delivered: u64,
    pub frames_concealed: u64,
    pub psnr_per_frame: Vec<Db>,
}

#[derive(Debug, Serialize)]
struct SummaryLine<'a> {
    summary: &'a RunSummary,
}

pub fn summary_line(summary: &RunSummary) -> String {
    serde_json::to_string(&SummaryLine { summary }).expect("summary serializes")
}

pub fn record_line(record: &MetricsRecord) -> String {
    serde_json::to_string(record).expect("record serializes")
}

/// Output of one tick.
#[derive(Debug, Default)]
pub struct TickOutput {
    pub record: Option<MetricsRecord>,
    pub frames: Vec<ReceivedFrame>,
}

#[derive(Debug, Clone)]
struct Interval {
    ticks: u64,
    h_sum: f64,
    h_min: f64,
    coded_bits: u64,
    coded_errors: u64,
    info_bits: u64,
    info_errors: u64,
    packets_ok: u64,
    packets_lost: u64,
    frames_concealed: u64,
    worst_psnr: Option<Db>,
}

impl Default for Interval {
    fn default() -> Self {
        Self {
            ticks: 0,
            h_sum: 0.0,
            h_min: f64::INFINITY,
            coded_bits: 0,
            coded_errors: 0,
            info_bits: 0,
            info_errors: 0,
            packets_ok: 0,
            packets_lost: 0,
            frames_concealed: 0,
            worst_psnr: None,
        }
    }
}

impl Interval {
    fn absorb(&mut self, other: &Interval) {
        self.coded_bits += other.coded_bits;
        self.coded_errors += other.coded_errors;
        self.info_bits += other.info_bits;
        self.info_errors += other.info_errors;
        self.packets_ok += other.packets_ok;
        self.packets_lost += other.packets_lost;
        self.frames_concealed += other.frames_concealed;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Burst currently on air.
struct TxBurst {
    coded: Vec<u8>,
    info: Vec<u8>,
    sent: usize,
}

pub struct Engine {
    config: ScenarioConfig,
    source: SourceData,
    plan: LinkPlan,
    packets: Vec<Packet>,
    next_packet: usize,

    fading: FadingProcess,
    pointing_rng: SimRng,
    noise_rng: SimRng,
    geometry: PointingGeometry,
    h_l: f64,
    tables: HashMap<(u64, u64), Arc<QuantileTable>>,
    table_seed: u64,

    tick: u64,
    total_ticks: u64,
    ticks_per_report: u64,
    bits_pushed: u64,

    tx: Option<TxBurst>,
    in_flight: VecDeque<TxBurst>,
    rx_bits: Vec<u8>,
    reassembler: Reassembler,

    scheduled: VecDeque<ScheduledUpdate>,
    live: VecDeque<ParamUpdate>,
    pending: (ChannelParams, PhyParams),

    interval: Interval,
    totals: Interval,
    frames_delivered: u64,
    psnr_per_frame: Vec<Db>,
    latest_frame: Option<ReceivedFrame>,
}

impl Engine {
    pub fn new(config: ScenarioConfig, source: SourceData) -> Result<Self, RuntimeError> {
        config.validate()?;
        let plan = LinkPlan::new(&config);
        let (packets, layout) = segment(&source.frames, source.kind, config.source.payload_size)?;
        let seed = config.seed;
        let table_seed = stream_seed(seed, Stream::QuantileTable as u64);
        let mut tables = HashMap::new();
        let marginal = marginal_for(&config.channel, &mut tables, table_seed)?;
        let fading = FadingProcess::new(marginal, config.channel.latent_rho()?, stream_rng(seed, Stream::Fading))?;
        let mut scheduled: Vec<_> = config.updates.clone();
        scheduled.sort_by(|a, b| a.at.total_cmp(&b.at));
        Ok(Self {
            geometry: PointingGeometry::from_params(&config.channel),
            h_l: path_loss(config.channel.attenuation_db_per_km, config.channel.distance),
            pointing_rng: stream_rng(seed, Stream::Pointing),
            noise_rng: stream_rng(seed, Stream::Noise),
            fading,
            tables,
            table_seed,
            tick: 0,
            total_ticks: config.total_ticks(),
            ticks_per_report: config.ticks_per_report(),
            bits_pushed: 0,
            tx: None,
            in_flight: VecDeque::new(),
            rx_bits: Vec::with_capacity(plan.burst_bits),
            reassembler: Reassembler::new(layout),
            scheduled: scheduled.into(),
            live: VecDeque::new(),
            pending: (config.channel.clone(), config.phy.clone()),
            interval: Interval::default(),
            totals: Interval::default(),
            frames_delivered: 0,
            psnr_per_frame: Vec::new(),
            latest_frame: None,
            plan,
            packets,
            next_packet: 0,
            source,
            config,
        })
    }

    /// Effective configuration, live updates included.
    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn source(&self) -> &SourceData {
        &self.source
    }

    pub fn layout(&self) -> &StreamLayout {
        self.reassembler.layout()
    }

    pub fn plan(&self) -> LinkPlan {
        self.plan
    }

    pub fn fading(&self) -> &FadingProcess {
        &self.fading
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn total_ticks(&self) -> u64 {
        self.total_ticks
    }

    pub fn is_done(&self) -> bool {
        self.tick >= self.total_ticks
    }

    pub fn elapsed(&self) -> f64 {
        self.tick as f64 * self.config.channel.tick_interval
    }

    pub fn params_in_effect(&self) -> ParamsInEffect {
        ParamsInEffect::of(&self.config.channel, &self.config.phy)
    }

    pub fn latest_frame(&self) -> Option<&ReceivedFrame> {
        self.latest_frame.as_ref()
    }

    /// Validates `update` against the parameters that will be in effect
    /// once already-queued updates land, then queues it for the next tick
    /// boundary. Returns the resulting parameter set.
    pub fn apply_update(&mut self, update: ParamUpdate) -> Result<ParamsInEffect, ConfigError> {
        let next = update.apply(&self.pending.0, &self.pending.1)?;
        let applied = ParamsInEffect::of(&next.0, &next.1);
        self.pending = next;
        self.live.push_back(update);
        Ok(applied)
    }

    fn install(&mut self, update: &ParamUpdate) -> Result<(), RuntimeError> {
        let (channel, phy) = update.apply(&self.config.channel, &self.config.phy)?;
        let marginal = marginal_for(&channel, &mut self.tables, self.table_seed)?;
        self.fading.set_marginal(marginal)?;
        self.fading.set_rho(channel.latent_rho()?)?;
        self.geometry = PointingGeometry::from_params(&channel);
        self.h_l = path_loss(channel.attenuation_db_per_km, channel.distance);
        self.config.channel = channel;
        self.config.phy = phy;
        Ok(())
    }

    fn apply_due_updates(&mut self) -> Result<(), RuntimeError> {
        let now = self.elapsed();
        // tolerate float noise in `at` vs tick arithmetic
        let eps = self.config.channel.tick_interval * 1e-6;
        while self.scheduled.front().is_some_and(|u| u.at <= now + eps) {
            let u = self.scheduled.pop_front().expect("checked");
            self.install(&u.set)?;
            self.pending = (self.config.channel.clone(), self.config.phy.clone());
        }
        while let Some(u) = self.live.pop_front() {
            self.install(&u)?;
        }
        Ok(())
    }

    fn bit_budget(&self, tick: u64) -> u64 {
        let per_tick = self.config.phy.bit_rate * self.config.channel.tick_interval;
        let cumulative = |k: u64| (per_tick * k as f64 + 1e-9).floor() as u64;
        cumulative(tick + 1) - cumulative(tick)
    }

    fn next_burst(&mut self) -> Option<TxBurst> {
        let packet = self.packets.get(self.next_packet)?;
        self.next_packet += 1;
        let frame = frame_pack(packet.seq, packet.flags, &self.plan.pad_payload(&packet.payload));
        let info = bytes_to_bits(&frame);
        let coded = fec_encode(self.config.fec.scheme, &info).expect("frame bits are byte aligned");
        let coded = self.config.fec.interleaver.interleave(&coded).expect("burst aligned to interleaver blocks");
        Some(TxBurst { coded, info, sent: 0 })
    }

    /// Advances one tick. Returns the metrics record when a report interval
    /// closes, plus any frames completed this tick.
    pub fn step(&mut self) -> Result<TickOutput, RuntimeError> {
        let mut out = TickOutput::default();
        if self.is_done() {
            return Ok(out);
        }
        self.apply_due_updates()?;

        let h_a = self.fading.next_gain();
        let h_p = self.geometry.sample(self.config.channel.pointing_jitter_sigma, &mut self.pointing_rng);
        let h = (self.h_l * h_a * h_p).max(MIN_GAIN);

        let budget = self.bit_budget(self.tick) as usize;
        let mut tx_bits = Vec::with_capacity(budget);
        while tx_bits.len() < budget {
            if self.tx.is_none() {
                self.tx = self.next_burst();
            }
            let Some(burst) = self.tx.as_mut() else { break };
            let take = (budget - tx_bits.len()).min(burst.coded.len() - burst.sent);
            tx_bits.extend_from_slice(&burst.coded[burst.sent..burst.sent + take]);
            burst.sent += take;
            if burst.sent == burst.coded.len() {
                self.in_flight.push_back(self.tx.take().expect("present"));
            }
        }
        let data_bits = tx_bits.len();
        tx_bits.resize(budget, 0);

        let phy = &self.config.phy;
        let gains = vec![h; budget];
        let symbols = modulate_ook(&tx_bits, phy.amplitude);
        let received = apply_channel(&symbols, &gains, phy.noise_sigma, &mut self.noise_rng)
            .expect("gains match symbols");
        let rx_bits = match phy.detection {
            Detection::Csi => demodulate_ook(&received, &gains, phy.amplitude).expect("gains match samples"),
            Detection::Fixed => demodulate_ook_fixed(&received, phy.amplitude),
        };

        let errors = tx_bits[..data_bits].iter().zip(&rx_bits).filter(|(a, b)| a != b).count() as u64;
        self.interval.coded_bits += data_bits as u64;
        self.interval.coded_errors += errors;
        self.bits_pushed += budget as u64;

        let mut consumed = 0;
        while consumed < data_bits {
            let need = self.plan.burst_bits - self.rx_bits.len();
            let take = need.min(data_bits - consumed);
            self.rx_bits.extend_from_slice(&rx_bits[consumed..consumed + take]);
            consumed += take;
            if self.rx_bits.len() == self.plan.burst_bits {
                let frames = self.receive_burst();
                self.account_frames(&frames);
                out.frames.extend(frames);
            }
        }

        self.interval.ticks += 1;
        self.interval.h_sum += h;
        self.interval.h_min = self.interval.h_min.min(h);
        self.tick += 1;

        if self.tick.is_multiple_of(self.ticks_per_report) || self.is_done() {
            out.record = Some(self.close_interval());
        }
        Ok(out)
    }

    fn receive_burst(&mut self) -> Vec<ReceivedFrame> {
        let sent = self.in_flight.pop_front().expect("every received burst was transmitted");
        let rx = std::mem::take(&mut self.rx_bits);
        let deinterleaved = self.config.fec.interleaver.deinterleave(&rx).expect("aligned burst");
        let (info, _) = fec_decode(self.config.fec.scheme, &deinterleaved).expect("aligned burst");
        let info_errors = info.iter().zip(&sent.info).filter(|(a, b)| a != b).count() as u64;
        self.interval.info_bits += info.len() as u64;
        self.interval.info_errors += info_errors;

        let expected_seq = self.reassembler.next_seq();
        let flags = self.source.kind.flags();
        let payload = frame_unpack(&bits_to_bytes(&info))
            .ok()
            .filter(|f| f.seq as usize == expected_seq && f.flags == flags)
            .and_then(|f| self.plan.unpad_payload(&f.payload).map(<[u8]>::to_vec));
        if payload.is_some() {
            self.interval.packets_ok += 1;
        } else {
            self.interval.packets_lost += 1;
        }
        self.rx_bits = rx;
        self.rx_bits.clear();
        self.reassembler.push(payload.as_deref())
    }

    fn account_frames(&mut self, frames: &[ReceivedFrame]) {
        for f in frames {
            let psnr = psnr_bytes(&self.source.frames[f.index], &f.bytes).expect("frame lengths match source");
            if f.concealed {
                self.interval.frames_concealed += 1;
            } else {
                self.frames_delivered += 1;
            }
            self.interval.worst_psnr = Some(match self.interval.worst_psnr {
                Some(w) if w.0 <= psnr.0 => w,
                _ => psnr,
            });
            self.psnr_per_frame.push(psnr);
        }
        if let Some(last) = frames.last() {
            self.latest_frame = Some(last.clone());
        }
    }

    fn close_interval(&mut self) -> MetricsRecord {
        let iv = std::mem::take(&mut self.interval);
        let record = MetricsRecord {
            t: self.elapsed(),
            h_mean: if iv.ticks == 0 { 0.0 } else { iv.h_sum / iv.ticks as f64 },
            h_min: if iv.ticks == 0 { 0.0 } else { iv.h_min },
            ber_pre_fec: ratio(iv.coded_errors, iv.coded_bits),
            ber_post_fec: ratio(iv.info_errors, iv.info_bits),
            packets_ok: iv.packets_ok,
            packets_lost: iv.packets_lost,
            frames_concealed: iv.frames_concealed,
            psnr_db: iv.worst_psnr,
            params_in_effect: self.params_in_effect(),
        };
        self.totals.absorb(&iv);
        record
    }

    /// Ends the run: untransmitted packets count as lost and every
    /// remaining frame is flushed through concealment.
    pub fn finish(&mut self) -> (Vec<ReceivedFrame>, RunSummary) {
        let before = self.reassembler.packets_lost();
        let frames = self.reassembler.finish();
        let unsent = self.reassembler.packets_lost() - before;
        self.account_frames(&frames);
        let rest = std::mem::take(&mut self.interval);
        self.totals.absorb(&rest);
        let t = &self.totals;
        let summary = RunSummary {
            duration: self.elapsed(),
            ticks: self.tick,
            bits_pushed: self.bits_pushed,
            bits_sent: t.coded_bits,
            bit_errors_pre_fec: t.coded_errors,
            info_bits: t.info_bits,
            bit_errors_post_fec: t.info_errors,
            ber_pre_fec: ratio(t.coded_errors, t.coded_bits),
            ber_post_fec: ratio(t.info_errors, t.info_bits),
            packets_sent: self.layout().packet_count() as u64 - unsent,
            packets_lost: self.reassembler.packets_lost(),
            packets_unsent: unsent,
            frames_total: self.source.frames.len() as u64,
            frames_delivered: self.frames_delivered,
            frames_concealed: t.frames_concealed,
            psnr_per_frame: self.psnr_per_frame.clone(),
        };
        (frames, summary)
    }
}

fn marginal_for(
    channel: &ChannelParams,
    tables: &mut HashMap<(u64, u64), Arc<QuantileTable>>,
    table_seed: u64,
) -> Result<crate::channel::TurbulenceMarginal, ChannelError> {
    build_marginal_with(channel, |alpha, beta| {
        if let Some(t) = tables.get(&(alpha.to_bits(), beta.to_bits())) {
            return Ok(t.clone());
        }
        let t = Arc::new(gg_quantile_table(alpha, beta, DEFAULT_TABLE_RESOLUTION, table_seed)?);
        tables.insert((alpha.to_bits(), beta.to_bits()), t.clone());
        Ok(t)
    })
}
