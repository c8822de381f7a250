//! Pipeline state snapshots. A snapshot taken between steps restores to a
//! reconstructor that produces bit-identical final outputs, because every
//! stage is deterministic and per-segment RNG streams are derived from the
//! seed rather than carried as live state.

use std::collections::VecDeque;

use crate::config::Config;
use crate::io::codec::{Reader, Writer};
use crate::io::IoError;
use crate::tracking::AnchorGaussians;

use super::{PipelineError, PoseSource, Reconstructor, RunReport};

const SNAPSHOT_MAGIC: &[u8; 8] = b"GSSNAP01";

impl Reconstructor {
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        let mut w = Writer::new(&mut buf);
        let r: Result<(), IoError> = (|| {
            w.bytes(SNAPSHOT_MAGIC)?;
            let cfg_text = self.cfg.to_text();
            w.u64(cfg_text.len() as u64)?;
            w.bytes(cfg_text.as_bytes())?;

            w.u64(self.cursor as u64)?;
            w.u64(self.poses.len() as u64)?;
            for (i, p) in self.poses.iter().enumerate() {
                match p {
                    Some(p) => {
                        w.bool(true)?;
                        w.pose(p)?;
                    }
                    None => w.bool(false)?,
                }
                w.bytes(&[pose_source_tag(self.pose_sources[i])])?;
            }
            w.u64(self.consecutive_failures as u64)?;
            match &self.last_rel_motion {
                Some(p) => {
                    w.bool(true)?;
                    w.pose(p)?;
                }
                None => w.bool(false)?,
            }
            w.u64(self.closed_segments.len() as u64)?;
            for s in &self.closed_segments {
                w.segment(s)?;
            }
            w.u64(self.current_start as u64)?;
            w.u64(self.current_anchor_index as u64)?;
            write_anchor(&mut w, &self.retention_anchor)?;
            w.u64(self.fit_cache.len() as u64)?;
            for a in &self.fit_cache {
                write_anchor(&mut w, a)?;
            }
            w.u64(self.segment_ordinal)?;
            write_report(&mut w, &self.report)
        })();
        r.expect("in-memory serialization cannot fail");
        buf
    }

    /// Restores a reconstructor; the dataset must be the one the snapshot
    /// was taken against (frame count is checked).
    pub fn restore(dataset: &super::Dataset, bytes: &[u8]) -> Result<Self, PipelineError> {
        let mut r = Reader::new(bytes, "snapshot");
        r.expect_magic(SNAPSHOT_MAGIC)?;
        let cfg_len = r.usize()?;
        let cfg_text = String::from_utf8(r.bytes(cfg_len)?)
            .map_err(|_| PipelineError::Invalid("snapshot config is not UTF-8".into()))?;
        let cfg = Config::from_str_overrides(&cfg_text)?;

        let cursor = r.usize()?;
        let n = r.usize()?;
        if n != dataset.len() {
            return Err(PipelineError::Invalid(format!(
                "snapshot covers {n} frames, dataset has {}",
                dataset.len()
            )));
        }
        let mut poses = Vec::with_capacity(n);
        let mut pose_sources = Vec::with_capacity(n);
        for _ in 0..n {
            let has = r.bool()?;
            poses.push(if has { Some(r.pose()?) } else { None });
            pose_sources.push(pose_source_from_tag(r.bytes(1)?[0])?);
        }
        let consecutive_failures = r.usize()?;
        let last_rel_motion = if r.bool()? { Some(r.pose()?) } else { None };
        let n_seg = r.usize()?;
        let mut closed_segments = Vec::with_capacity(n_seg);
        for _ in 0..n_seg {
            closed_segments.push(r.segment()?);
        }
        let current_start = r.usize()?;
        let current_anchor_index = r.usize()?;
        let retention_anchor = read_anchor(&mut r)?;
        let n_cache = r.usize()?;
        let mut fit_cache = VecDeque::with_capacity(n_cache);
        for _ in 0..n_cache {
            fit_cache.push_back(read_anchor(&mut r)?);
        }
        let segment_ordinal = r.u64()?;
        let report = read_report(&mut r)?;

        let train_frames: Vec<usize> = (0..n).filter(|&i| !cfg.is_holdout(i)).collect();
        Ok(Reconstructor {
            cfg,
            train_frames,
            cursor,
            poses,
            pose_sources,
            consecutive_failures,
            last_rel_motion,
            closed_segments,
            current_start,
            current_anchor_index,
            retention_anchor,
            fit_cache,
            segment_ordinal,
            report,
        })
    }
}

fn pose_source_tag(s: PoseSource) -> u8 {
    match s {
        PoseSource::Initial => 0,
        PoseSource::Tracked => 1,
        PoseSource::Extrapolated => 2,
        PoseSource::Interpolated => 3,
        PoseSource::Pending => 4,
    }
}

fn pose_source_from_tag(t: u8) -> Result<PoseSource, PipelineError> {
    Ok(match t {
        0 => PoseSource::Initial,
        1 => PoseSource::Tracked,
        2 => PoseSource::Extrapolated,
        3 => PoseSource::Interpolated,
        4 => PoseSource::Pending,
        _ => return Err(PipelineError::Invalid(format!("bad pose source tag {t}"))),
    })
}

fn write_anchor<W: std::io::Write>(w: &mut Writer<W>, a: &AnchorGaussians) -> Result<(), IoError> {
    w.u64(a.source_frame as u64)?;
    w.f64(a.fit_loss)?;
    w.scene(&a.gaussians)
}

fn read_anchor<R: std::io::Read>(r: &mut Reader<R>) -> Result<AnchorGaussians, IoError> {
    let source_frame = r.usize()?;
    let fit_loss = r.f64()?;
    let gaussians = r.scene()?;
    Ok(AnchorGaussians { gaussians, source_frame, fit_loss })
}

fn write_report<W: std::io::Write>(w: &mut Writer<W>, rep: &RunReport) -> Result<(), IoError> {
    w.u64(rep.retention.len() as u64)?;
    for rec in &rep.retention {
        w.u64(rec.frame_index as u64)?;
        w.u64(rec.visible_count as u64)?;
        w.u64(rec.anchor_count as u64)?;
        w.f64(rec.retention)?;
    }
    w.u64(rep.tracked as u64)?;
    w.u64(rep.failed as u64)?;
    w.u64(rep.interpolated as u64)?;
    w.u64(rep.flow_unavailable_pairs as u64)?;
    w.u64(rep.warnings.len() as u64)?;
    for s in &rep.warnings {
        w.u64(s.len() as u64)?;
        w.bytes(s.as_bytes())?;
    }
    Ok(())
}

fn read_report<R: std::io::Read>(r: &mut Reader<R>) -> Result<RunReport, PipelineError> {
    let n = r.usize()?;
    let mut retention = Vec::with_capacity(n);
    for _ in 0..n {
        retention.push(crate::segmentation::RetentionRecord {
            frame_index: r.usize()?,
            visible_count: r.usize()?,
            anchor_count: r.usize()?,
            retention: r.f64()?,
        });
    }
    let tracked = r.usize()?;
    let failed = r.usize()?;
    let interpolated = r.usize()?;
    let flow_unavailable_pairs = r.usize()?;
    let n_warn = r.usize()?;
    let mut warnings = Vec::with_capacity(n_warn);
    for _ in 0..n_warn {
        let len = r.usize()?;
        warnings.push(
            String::from_utf8(r.bytes(len)?)
                .map_err(|_| PipelineError::Invalid("snapshot warning not UTF-8".into()))?,
        );
    }
    Ok(RunReport {
        retention,
        tracked,
        failed,
        interpolated,
        flow_unavailable_pairs,
        warnings,
    })
}
