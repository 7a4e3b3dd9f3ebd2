use super::TrainConfig;
use crate::encoder::EncoderInput;
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::scenes::{AgentTrack, Scene, SceneSet, Standardizer};

/// Builds the sample of `track` at prediction frame `t`, or `None` when the
/// agent lacks `n_I` observed frames or a complete future.
pub fn sample_at(
    scene: &Scene,
    scene_index: usize,
    track: &AgentTrack,
    t: i64,
    cfg: &TrainConfig,
    std: &Standardizer,
) -> Result<Option<Sample>> {
    let h = cfg.horizon_steps as i64;
    let observed_from = t - cfg.observed_steps as i64 + 1;
    if t - (cfg.history_steps as i64) < scene.first_frame() || t + h > scene.last_frame() {
        return Ok(None);
    }
    if !(observed_from..=t + h).all(|f| track.is_present(f)) {
        return Ok(None);
    }
    let input = EncoderInput::from_scene(
        scene,
        track.agent_id,
        t,
        cfg.history_steps,
        cfg.observed_steps,
        cfg.radius(track.class),
        std,
    )?;
    let now = track.state_at(t).expect("presence checked");
    let mut future = Vec::with_capacity(cfg.horizon_steps);
    let mut gt_rel = Vec::with_capacity(cfg.horizon_steps);
    let mut gt_rel_m = Vec::with_capacity(cfg.horizon_steps);
    for f in t + 1..=t + h {
        let s = track.state_at(f).expect("presence checked");
        let d = [s.x - now.x, s.y - now.y];
        let rel = std.offset(d);
        let v = std.velocity(s.vel());
        future.push([rel[0], rel[1], v[0], v[1]]);
        gt_rel.push(rel);
        gt_rel_m.push(d);
    }
    let sample = Sample {
        scene: scene_index,
        agent_id: track.agent_id,
        class: track.class,
        frame: t,
        input,
        current_vel: std.velocity(now.vel()),
        current_pos_m: now.pos(),
        future,
        gt_rel,
        gt_rel_m,
    };
    if sample.future.iter().flatten().any(|v| !v.is_finite()) || sample.current_vel.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "scene {} agent {} frame {t}: non-finite features",
            scene.scene_id, track.agent_id
        )));
    }
    Ok(Some(sample))
}

/// Every agent of the listed scenes at prediction frames
/// `first + T, first + T + stride, ...`, ordered by scene, agent, frame.
pub fn build_samples(set: &SceneSet, indices: &[usize], cfg: &TrainConfig, std: &Standardizer) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for &i in indices {
        let scene = &set.scenes[i];
        let mut t = scene.first_frame() + cfg.history_steps as i64;
        while t + cfg.horizon_steps as i64 <= scene.last_frame() {
            for track in &scene.tracks {
                if let Some(s) = sample_at(scene, i, track, t, cfg, std)? {
                    out.push(s);
                }
            }
            t += cfg.window_stride as i64;
        }
    }
    Ok(out)
}

/// The ego vehicle at the decision frame of each gap scene listed.
pub fn gap_samples(set: &SceneSet, indices: &[usize], cfg: &TrainConfig, std: &Standardizer) -> Result<Vec<(usize, Sample)>> {
    let mut out = Vec::new();
    for &i in indices {
        let scene = &set.scenes[i];
        let Some(meta) = scene.gap_meta else {
            continue;
        };
        let ego = scene
            .ego()
            .ok_or_else(|| Error::validation(format!("scene {} has no agents", scene.scene_id)))?;
        if let Some(s) = sample_at(scene, i, ego, meta.decision_frame, cfg, std)? {
            out.push((i, s));
        }
    }
    Ok(out)
}
