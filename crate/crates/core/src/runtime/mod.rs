//! End-to-end link runtime: scenario configuration, the tick engine and
//! the batch runner that writes `report.jsonl` plus received frames.

mod config;
mod engine;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

pub use config::{
    ConfigError, FecConfig, LinkPlan, ParamUpdate, ParamsInEffect, ScenarioConfig, ScheduledUpdate, SourceConfig,
    SourceKind, CANONICAL_DURATION, PAD_FIELD_LEN, SCHEMA_VERSION,
};
pub use engine::{record_line, summary_line, Engine, MetricsRecord, RunSummary, RuntimeError, SourceData, TickOutput};

use crate::transport::StreamKind;

pub const REPORT_FILE: &str = "report.jsonl";
pub const FRAMES_DIR: &str = "frames";
pub const OPAQUE_OUTPUT: &str = "received.bin";

/// Everything a batch run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
    /// Received frame bytes in source order.
    pub frames: Vec<Vec<u8>>,
}

impl RunOutcome {
    /// The exact bytes written to `report.jsonl`.
    pub fn report_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&record_line(r));
            out.push('\n');
        }
        out.push_str(&summary_line(&self.summary));
        out.push('\n');
        out
    }
}

/// Runs `config` to completion as fast as possible. With `out_dir`, writes
/// `report.jsonl` as records are produced and the received frames at the
/// end (`frames/frame_NNNNN.pgm`, or `received.bin` for opaque sources).
pub fn run_scenario(config: &ScenarioConfig, out_dir: Option<&Path>) -> Result<RunOutcome, RuntimeError> {
    config.validate()?;
    let source = SourceData::load(config)?;
    let mut engine = Engine::new(config.clone(), source)?;

    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RuntimeError::Io { path, source }
    };
    let mut report = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io(dir))?;
            let path = dir.join(REPORT_FILE);
            Some((BufWriter::new(fs::File::create(&path).map_err(io(&path))?), path))
        }
        None => None,
    };

    let mut records = Vec::new();
    let mut frames = vec![Vec::new(); engine.source().frames.len()];
    while !engine.is_done() {
        let out = engine.step()?;
        for f in out.frames {
            let idx = f.index;
            frames[idx] = f.bytes;
        }
        if let Some(record) = out.record {
            if let Some((w, path)) = report.as_mut() {
                writeln!(w, "{}", record_line(&record)).map_err(io(path))?;
            }
            records.push(record);
        }
    }
    let (rest, summary) = engine.finish();
    for f in rest {
        let idx = f.index;
        frames[idx] = f.bytes;
    }

    if let (Some((mut w, path)), Some(dir)) = (report, out_dir) {
        writeln!(w, "{}", summary_line(&summary)).map_err(io(&path))?;
        w.flush().map_err(io(&path))?;
        write_received(dir, engine.source(), &frames)?;
    }
    Ok(RunOutcome { records, summary, frames })
}

fn write_received(dir: &Path, source: &SourceData, frames: &[Vec<u8>]) -> Result<(), RuntimeError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RuntimeError::Io { path, source }
    };
    match source.kind {
        StreamKind::Opaque => {
            let path = dir.join(OPAQUE_OUTPUT);
            fs::write(&path, frames.concat()).map_err(io(&path))?;
        }
        StreamKind::RawFrames => {
            let frames_dir = dir.join(FRAMES_DIR);
            fs::create_dir_all(&frames_dir).map_err(io(&frames_dir))?;
            for (i, bytes) in frames.iter().enumerate() {
                let frame = source.to_video(bytes).expect("received frames keep source dimensions");
                crate::transport::write_pgm(&frames_dir.join(format!("frame_{i:05}.pgm")), &frame)?;
            }
        }
    }
    Ok(())
}
