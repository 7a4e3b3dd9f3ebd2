//! Track and gap-metadata CSV files.
//!
//! ```text
//! scene_id,frame,agent_id,class,x,y,vx,vy
//! scene_id,gap_size,accepted,decision_frame
//! ```
//!
//! Only present states are written. Floats carry 17 significant digits so a
//! save/load cycle reproduces every value exactly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{AgentClass, AgentState, AgentTrack, GapMeta, Scene, SceneSet};
use crate::error::{Error, Result};

pub const TRACKS_HEADER: [&str; 8] = ["scene_id", "frame", "agent_id", "class", "x", "y", "vx", "vy"];
pub const GAPS_HEADER: [&str; 4] = ["scene_id", "gap_size", "accepted", "decision_frame"];
pub const TRACKS_FILE: &str = "tracks.csv";
pub const GAPS_FILE: &str = "gaps.csv";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn save_tracks(set: &SceneSet, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{}", TRACKS_HEADER.join(","))?;
        for scene in &set.scenes {
            for track in &scene.tracks {
                for (s, present) in track.states.iter().zip(&track.presence) {
                    if !present {
                        continue;
                    }
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{}",
                        scene.scene_id,
                        s.frame,
                        track.agent_id,
                        track.class,
                        fmt_f64(s.x),
                        fmt_f64(s.y),
                        fmt_f64(s.vx),
                        fmt_f64(s.vy)
                    )?;
                }
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn save_gap_meta(set: &SceneSet, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{}", GAPS_HEADER.join(","))?;
        for scene in &set.scenes {
            if let Some(g) = scene.gap_meta {
                writeln!(
                    w,
                    "{},{},{},{}",
                    scene.scene_id,
                    fmt_f64(g.gap_size),
                    u8::from(g.accepted),
                    g.decision_frame
                )?;
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

fn reader(path: &Path, header: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let got = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(parse_err(path, 1, format!("expected header `{}`", header.join(","))));
    }
    Ok(rdr)
}

fn parse_err(path: &Path, line: u64, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, path: &Path, line: u64) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| parse_err(path, line, format!("missing `{name}`")))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad `{name}` value `{raw}`")))
}

struct RawTrack {
    class: AgentClass,
    rows: Vec<AgentState>,
}

/// Reads a track CSV. `dt` is the frame spacing in seconds, which the file
/// format does not carry.
pub fn load_tracks(path: &Path, dt: f64) -> Result<SceneSet> {
    if !(dt > 0.0) {
        return Err(Error::config("dt", "must be > 0"));
    }
    let mut rdr = reader(path, &TRACKS_HEADER)?;
    let mut scene_order: Vec<u64> = Vec::new();
    let mut scenes: HashMap<u64, (Vec<u64>, HashMap<u64, RawTrack>)> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != TRACKS_HEADER.len() {
            return Err(parse_err(path, line, format!("expected 8 fields, got {}", rec.len())));
        }
        let scene_id: u64 = field(&rec, 0, "scene_id", path, line)?;
        let frame: i64 = field(&rec, 1, "frame", path, line)?;
        let agent_id: u64 = field(&rec, 2, "agent_id", path, line)?;
        let class = AgentClass::parse(rec[3].trim())
            .ok_or_else(|| parse_err(path, line, format!("unknown class `{}`", &rec[3])))?;
        let x: f64 = field(&rec, 4, "x", path, line)?;
        let y: f64 = field(&rec, 5, "y", path, line)?;
        let vx: f64 = field(&rec, 6, "vx", path, line)?;
        let vy: f64 = field(&rec, 7, "vy", path, line)?;
        if ![x, y, vx, vy].iter().all(|v| v.is_finite()) {
            return Err(parse_err(path, line, "non-finite state value"));
        }
        let (agent_order, tracks) = scenes.entry(scene_id).or_insert_with(|| {
            scene_order.push(scene_id);
            (Vec::new(), HashMap::new())
        });
        let raw = tracks.entry(agent_id).or_insert_with(|| {
            agent_order.push(agent_id);
            RawTrack { class, rows: Vec::new() }
        });
        if raw.class != class {
            return Err(parse_err(path, line, format!("agent {agent_id} changes class")));
        }
        raw.rows.push(AgentState { frame, x, y, vx, vy });
    }

    let mut out = Vec::with_capacity(scene_order.len());
    for scene_id in scene_order {
        let (agent_order, mut raw) = scenes.remove(&scene_id).expect("scene recorded");
        let first = raw
            .values()
            .flat_map(|t| t.rows.iter().map(|s| s.frame))
            .min()
            .expect("scene has rows");
        let mut tracks = Vec::with_capacity(agent_order.len());
        for agent_id in agent_order {
            let mut t = raw.remove(&agent_id).expect("agent recorded");
            t.rows.sort_by_key(|s| s.frame);
            for w in t.rows.windows(2) {
                if w[1].frame != w[0].frame + 1 {
                    return Err(Error::validation(format!(
                        "scene {scene_id}, agent {agent_id}: non-uniform frame grid ({} -> {})",
                        w[0].frame, w[1].frame
                    )));
                }
            }
            let lead = (t.rows[0].frame - first) as usize;
            let mut states = Vec::with_capacity(lead + t.rows.len());
            let mut presence = Vec::with_capacity(lead + t.rows.len());
            for k in 0..lead {
                states.push(AgentState {
                    frame: first + k as i64,
                    x: 0.0,
                    y: 0.0,
                    vx: 0.0,
                    vy: 0.0,
                });
                presence.push(false);
            }
            presence.extend(std::iter::repeat_n(true, t.rows.len()));
            states.extend(t.rows);
            tracks.push(AgentTrack {
                agent_id,
                class: t.class,
                states,
                presence,
            });
        }
        let scene = Scene {
            scene_id,
            dt,
            tracks,
            gap_meta: None,
        };
        scene.validate()?;
        out.push(scene);
    }
    let source_tag = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(SceneSet {
        scenes: out,
        source_tag,
    })
}

/// Attaches gap metadata rows to the scenes of `set`.
pub fn load_gap_meta(set: &mut SceneSet, path: &Path) -> Result<()> {
    let mut rdr = reader(path, &GAPS_HEADER)?;
    let index: HashMap<u64, usize> = set.scenes.iter().enumerate().map(|(i, s)| (s.scene_id, i)).collect();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != GAPS_HEADER.len() {
            return Err(parse_err(path, line, format!("expected 4 fields, got {}", rec.len())));
        }
        let scene_id: u64 = field(&rec, 0, "scene_id", path, line)?;
        let gap_size: f64 = field(&rec, 1, "gap_size", path, line)?;
        let accepted = match rec[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(path, line, format!("bad `accepted` value `{other}`"))),
        };
        let decision_frame: i64 = field(&rec, 3, "decision_frame", path, line)?;
        let &i = index
            .get(&scene_id)
            .ok_or_else(|| parse_err(path, line, format!("unknown scene {scene_id}")))?;
        set.scenes[i].gap_meta = Some(GapMeta {
            gap_size,
            accepted,
            decision_frame,
        });
    }
    Ok(())
}

/// Writes `tracks.csv` and, when any scene carries gap metadata, `gaps.csv`.
pub fn save_scene_dir(set: &SceneSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_tracks(set, &dir.join(TRACKS_FILE))?;
    if set.scenes.iter().any(|s| s.gap_meta.is_some()) {
        save_gap_meta(set, &dir.join(GAPS_FILE))?;
    }
    Ok(())
}

pub fn load_scene_dir(dir: &Path, dt: f64) -> Result<SceneSet> {
    let mut set = load_tracks(&dir.join(TRACKS_FILE), dt)?;
    let gaps = dir.join(GAPS_FILE);
    if gaps.exists() {
        load_gap_meta(&mut set, &gaps)?;
    }
    set.source_tag = dir.display().to_string();
    Ok(set)
}
