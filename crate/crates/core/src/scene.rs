//! Procedural multi-frame scenes with analytically exact ground truth.
//!
//! Frames are painted by evaluating a continuous sinusoidal texture at the
//! exact surface point each pixel's ray hits — no image resampling chain —
//! so photometric consistency between views is exact for static regions.
//! Moving objects are image-space overlays with constant 2D velocity and
//! their own texture; the occlusion mask marks background pixels whose
//! correspondence in the other frame is covered (by an object overlay or,
//! for the two-layer layout, by the nearer layer's z-ordering).

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::grid::{DepthMap, FlowField, Image, Mask};
use crate::rigid::rigid_flow;
use crate::se3::PoseSE3;

/// Scene surface geometry. Planes live in world coordinates; the frame-0
/// camera convention is the identity pose, so a fronto-parallel plane at
/// depth d is the world plane z = d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Layout {
    FrontoParallel {
        depth: f64,
    },
    Slanted {
        base_depth: f64,
        slope_x: f64,
        slope_y: f64,
    },
    /// Background plane plus a nearer rectangular slab (world rect at the
    /// foreground depth: [x0, y0, width, height] in scene units).
    TwoLayer {
        bg_depth: f64,
        fg_depth: f64,
        fg_rect: [f64; 4],
    },
}

/// Analytic texture parameters: a sum of non-axis-aligned sinusoids whose
/// image-space period stays at or above `min_period_px` (at the deepest
/// surface point) to keep bilinear resampling well below the Nyquist limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureSpec {
    pub num_sinusoids: usize,
    /// Total amplitude budget; values stay within 0.5 +/- amplitude.
    pub amplitude: f64,
    pub min_period_px: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec {
            num_sinusoids: 4,
            amplitude: 0.4,
            min_period_px: 8.0,
        }
    }
}

/// Rectangular image-space overlay moving at constant pixel velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingObject {
    /// [x, y, width, height] in pixels at frame 0.
    pub rect: [f64; 4],
    /// Pixels per frame.
    pub velocity: [f64; 2],
}

impl MovingObject {
    fn rect_at(&self, frame: f64) -> [f64; 4] {
        [
            self.rect[0] + self.velocity[0] * frame,
            self.rect[1] + self.velocity[1] * frame,
            self.rect[2],
            self.rect[3],
        ]
    }

    fn contains(&self, frame: f64, x: f64, y: f64) -> bool {
        let r = self.rect_at(frame);
        x >= r[0] && x < r[0] + r[2] && y >= r[1] && y < r[1] + r[3]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub num_frames: usize,
    pub intrinsics: CameraIntrinsics,
    pub layout: Layout,
    pub texture: TextureSpec,
    /// World-to-camera pose per frame; empty means all identity.
    pub poses: Vec<PoseSE3>,
    pub objects: Vec<MovingObject>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if self.width < 4 || self.height < 4 {
            return fail(format!("image size {}x{} too small", self.width, self.height));
        }
        if self.channels != 1 && self.channels != 3 {
            return fail(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.num_frames < 2 {
            return fail("need at least two frames".into());
        }
        if !self.poses.is_empty() && self.poses.len() != self.num_frames {
            return fail(format!(
                "poses: expected {} entries (one per frame), got {}",
                self.num_frames,
                self.poses.len()
            ));
        }
        match self.layout {
            Layout::FrontoParallel { depth } => {
                if depth <= 0.0 {
                    return fail(format!("layout.depth must be positive, got {depth}"));
                }
            }
            Layout::Slanted { base_depth, .. } => {
                if base_depth <= 0.0 {
                    return fail(format!("layout.base_depth must be positive, got {base_depth}"));
                }
            }
            Layout::TwoLayer {
                bg_depth,
                fg_depth,
                fg_rect,
            } => {
                if fg_depth <= 0.0 || bg_depth <= fg_depth {
                    return fail(format!(
                        "layout depths must satisfy 0 < fg_depth < bg_depth, got fg={fg_depth} bg={bg_depth}"
                    ));
                }
                if fg_rect[2] <= 0.0 || fg_rect[3] <= 0.0 {
                    return fail("layout.fg_rect must have positive extent".into());
                }
            }
        }
        if self.texture.num_sinusoids < 3 {
            return fail(format!(
                "texture.num_sinusoids must be >= 3, got {}",
                self.texture.num_sinusoids
            ));
        }
        if !(self.texture.amplitude > 0.0 && self.texture.amplitude <= 0.45) {
            return fail(format!(
                "texture.amplitude must lie in (0, 0.45], got {}",
                self.texture.amplitude
            ));
        }
        if self.texture.min_period_px < 4.0 {
            return fail(format!(
                "texture.min_period_px must be >= 4 (Nyquist margin), got {}",
                self.texture.min_period_px
            ));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let [x, y, w, h] = o.rect;
            if w <= 0.0 || h <= 0.0 {
                return fail(format!("objects[{i}].rect has nonpositive extent"));
            }
            if x < 0.0 || y < 0.0 || x + w > self.width as f64 || y + h > self.height as f64 {
                return fail(format!(
                    "objects[{i}].rect [{x}, {y}, {w}, {h}] leaves the image at frame 0"
                ));
            }
        }
        Ok(())
    }

    /// World-to-camera pose of a frame (identity when poses were omitted).
    pub fn pose_of(&self, frame: usize) -> PoseSE3 {
        self.poses.get(frame).copied().unwrap_or_else(PoseSE3::identity)
    }
}

/// One sinusoid component over 2D coordinates.
#[derive(Debug, Clone, Copy)]
struct Sinusoid {
    amp: f64,
    freq_x: f64,
    freq_y: f64,
    phase: f64,
}

/// Continuous texture: 0.5 + sum of sinusoids, one variant per channel.
#[derive(Debug, Clone)]
struct Texture {
    channels: Vec<Vec<Sinusoid>>,
}

impl Texture {
    fn sample(&self, ch: usize, x: f64, y: f64) -> f64 {
        let mut v = 0.5;
        for s in &self.channels[ch] {
            v += s.amp * (std::f64::consts::TAU * (s.freq_x * x + s.freq_y * y) + s.phase).sin();
        }
        v
    }

    /// Random texture whose component periods (in the given unit) are at
    /// least `min_period`.
    fn random(rng: &mut ChaCha8Rng, spec: &TextureSpec, channels: usize, min_period: f64) -> Texture {
        let n = spec.num_sinusoids;
        let mut tex_channels = Vec::with_capacity(channels);
        for _ in 0..channels {
            let mut comps = Vec::with_capacity(n);
            let mut weights: Vec<f64> = (0..n).map(|_| 0.5 + rng.gen::<f64>()).collect();
            let wsum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w *= spec.amplitude / wsum;
            }
            for (k, &amp) in weights.iter().enumerate() {
                // Direction kept away from the axes; quadrant rotates with k
                // so the set spans orientations.
                let theta = (15.0 + 60.0 * rng.gen::<f64>()).to_radians()
                    + (k % 4) as f64 * std::f64::consts::FRAC_PI_2;
                let period = min_period * (1.0 + 3.0 * rng.gen::<f64>());
                let f = 1.0 / period;
                comps.push(Sinusoid {
                    amp,
                    freq_x: f * theta.cos(),
                    freq_y: f * theta.sin(),
                    phase: std::f64::consts::TAU * rng.gen::<f64>(),
                });
            }
            tex_channels.push(comps);
        }
        Texture {
            channels: tex_channels,
        }
    }
}

/// Resolved continuous scene: everything needed to evaluate any frame at any
/// continuous image position.
#[derive(Debug, Clone)]
pub struct SceneModel {
    spec: SceneSpec,
    background: Texture,
    object_textures: Vec<Texture>,
}

/// A surface point hit by a camera ray.
#[derive(Debug, Clone, Copy)]
struct SurfaceHit {
    world: Vector3<f64>,
    /// Camera-frame depth (z) of the hit.
    depth: f64,
}

impl SceneModel {
    fn camera_center(&self, frame: usize) -> Vector3<f64> {
        let pose = self.spec.pose_of(frame);
        let r = pose.rotation_matrix();
        -(r.transpose() * pose.translation_vector())
    }

    /// Intersects the ray through continuous pixel (x, y) of `frame` with the
    /// scene surfaces, front-most hit first.
    fn surface_hit(&self, frame: usize, x: f64, y: f64) -> Result<SurfaceHit> {
        let pose = self.spec.pose_of(frame);
        let r = pose.rotation_matrix();
        let origin = self.camera_center(frame);
        let dir = r.transpose() * self.spec.intrinsics.ray(x, y);

        let plane_hit = |depth_plane: f64| -> Result<f64> {
            if dir.z.abs() < 1e-12 {
                return Err(Error::InvalidSpec(format!(
                    "ray through ({x:.2}, {y:.2}) of frame {frame} is parallel to the plane"
                )));
            }
            Ok((depth_plane - origin.z) / dir.z)
        };

        let s = match self.spec.layout {
            Layout::FrontoParallel { depth } => plane_hit(depth)?,
            Layout::Slanted {
                base_depth,
                slope_x,
                slope_y,
            } => {
                let denom = dir.z - slope_x * dir.x - slope_y * dir.y;
                if denom.abs() < 1e-12 {
                    return Err(Error::InvalidSpec(format!(
                        "ray through ({x:.2}, {y:.2}) of frame {frame} is parallel to the slanted plane"
                    )));
                }
                (base_depth + slope_x * origin.x + slope_y * origin.y - origin.z) / denom
            }
            Layout::TwoLayer {
                bg_depth,
                fg_depth,
                fg_rect,
            } => {
                let s_bg = plane_hit(bg_depth)?;
                let s_fg = plane_hit(fg_depth)?;
                let hit_fg = if s_fg > 0.0 && s_fg < s_bg {
                    let p = origin + dir * s_fg;
                    p.x >= fg_rect[0]
                        && p.x < fg_rect[0] + fg_rect[2]
                        && p.y >= fg_rect[1]
                        && p.y < fg_rect[1] + fg_rect[3]
                } else {
                    false
                };
                if hit_fg {
                    s_fg
                } else {
                    s_bg
                }
            }
        };
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "surface behind camera at pixel ({x:.2}, {y:.2}) of frame {frame}"
            )));
        }
        Ok(SurfaceHit {
            world: origin + dir * s,
            depth: s,
        })
    }

    /// Continuous image value of `frame` at (x, y): object overlay first,
    /// otherwise the background surface texture.
    pub fn frame_value(&self, frame: usize, ch: usize, x: f64, y: f64) -> Result<f64> {
        let t = frame as f64;
        for (oi, obj) in self.spec.objects.iter().enumerate() {
            if obj.contains(t, x, y) {
                let ox = x - obj.velocity[0] * t;
                let oy = y - obj.velocity[1] * t;
                return Ok(self.object_textures[oi].sample(ch, ox, oy));
            }
        }
        let hit = self.surface_hit(frame, x, y)?;
        Ok(self.background.sample(ch, hit.world.x, hit.world.y))
    }

    /// Projects a world point into a frame; returns the continuous pixel
    /// position and the camera depth.
    fn project_into(&self, frame: usize, world: &Vector3<f64>) -> (f64, f64, f64) {
        let pose = self.spec.pose_of(frame);
        let pc = pose.apply(world);
        let k = &self.spec.intrinsics;
        (k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy, pc.z)
    }
}

/// Ground truth for one ordered frame pair.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub target: usize,
    pub source: usize,
    /// Relative camera motion T_{t->s}.
    pub pose: PoseSE3,
    pub rigid: FlowField,
    pub residual: FlowField,
    pub full: FlowField,
    /// 1 where the target pixel's correspondence is hidden in the source.
    pub occlusion: Mask,
}

/// Generated scene: frames, per-frame depth, per-ordered-pair ground truth,
/// plus the continuous model for exact re-evaluation.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub frames: Vec<Image>,
    pub gt_depth: Vec<DepthMap>,
    pub pairs: Vec<ScenePair>,
    pub model: SceneModel,
}

impl Scene {
    /// Index of the pair (target, source), if present.
    pub fn pair(&self, target: usize, source: usize) -> Option<&ScenePair> {
        self.pairs
            .iter()
            .find(|p| p.target == target && p.source == source)
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Deepest surface point bounds the image-space texture period from
    // below: a world period P maps to P * fx / z pixels.
    let z_max = match spec.layout {
        Layout::FrontoParallel { depth } => depth,
        Layout::Slanted {
            base_depth,
            slope_x,
            slope_y,
        } => {
            // Conservative bound over the frame-0 footprint.
            let k = &spec.intrinsics;
            let mut z: f64 = base_depth;
            for &(px, py) in &[
                (0.0, 0.0),
                (spec.width as f64 - 1.0, 0.0),
                (0.0, spec.height as f64 - 1.0),
                (spec.width as f64 - 1.0, spec.height as f64 - 1.0),
            ] {
                let dir = k.ray(px, py);
                let denom = 1.0 - slope_x * dir.x - slope_y * dir.y;
                if denom.abs() > 1e-9 {
                    z = z.max(base_depth / denom);
                }
            }
            z * 1.5
        }
        Layout::TwoLayer { bg_depth, .. } => bg_depth,
    };
    let min_focal = spec.intrinsics.fx.min(spec.intrinsics.fy);
    let min_world_period = spec.texture.min_period_px * z_max / min_focal;
    let background = Texture::random(&mut rng, &spec.texture, spec.channels, min_world_period);
    let object_textures: Vec<Texture> = spec
        .objects
        .iter()
        .map(|_| Texture::random(&mut rng, &spec.texture, spec.channels, spec.texture.min_period_px))
        .collect();

    let model = SceneModel {
        spec: spec.clone(),
        background,
        object_textures,
    };

    // Frames and depth maps.
    let (w, h, c) = (spec.width, spec.height, spec.channels);
    let mut frames = Vec::with_capacity(spec.num_frames);
    let mut gt_depth = Vec::with_capacity(spec.num_frames);
    for f in 0..spec.num_frames {
        let mut data = Vec::with_capacity(w * h * c);
        let mut depth = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(model.frame_value(f, ch, x as f64, y as f64)?);
                }
                depth.push(model.surface_hit(f, x as f64, y as f64)?.depth);
            }
        }
        frames.push(Image::new(w, h, c, data)?);
        gt_depth.push(DepthMap::new(w, h, depth)?);
    }

    // Ordered adjacent pairs with ground truth.
    let mut pairs = Vec::new();
    for i in 0..spec.num_frames - 1 {
        for &(t, s) in &[(i, i + 1), (i + 1, i)] {
            pairs.push(build_pair(&model, &gt_depth, t, s)?);
        }
    }

    Ok(Scene {
        spec: spec.clone(),
        frames,
        gt_depth,
        pairs,
        model,
    })
}

fn build_pair(model: &SceneModel, gt_depth: &[DepthMap], t: usize, s: usize) -> Result<ScenePair> {
    let spec = &model.spec;
    let (w, h) = (spec.width, spec.height);
    let pose_t = spec.pose_of(t);
    let pose_s = spec.pose_of(s);
    // T_{t->s} maps target-camera coordinates into the source camera.
    let rel = pose_s.compose(&pose_t.inverse());

    let (rigid, _valid) = rigid_flow(&gt_depth[t], &rel, &spec.intrinsics)?;
    let delta_f = s as f64 - t as f64;

    let mut full = rigid.clone();
    let tf = t as f64;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for obj in &spec.objects {
                if obj.contains(tf, x as f64, y as f64) {
                    full.u[i] = obj.velocity[0] * delta_f;
                    full.v[i] = obj.velocity[1] * delta_f;
                    break;
                }
            }
        }
    }
    let residual = FlowField::new(
        w,
        h,
        full.u.iter().zip(&rigid.u).map(|(a, b)| a - b).collect(),
        full.v.iter().zip(&rigid.v).map(|(a, b)| a - b).collect(),
    )?;

    // Occlusion: background pixels whose source correspondence is covered by
    // an object overlay, or (two-layer) by a nearer surface.
    let sf = s as f64;
    let mut occ = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (px, py) = (x as f64, y as f64);
            let on_object = spec.objects.iter().any(|o| o.contains(tf, px, py));
            if on_object {
                // Overlays move rigidly and stay on top: never occluded.
                continue;
            }
            let (sx, sy) = (px + full.u[i], py + full.v[i]);
            if spec.objects.iter().any(|o| o.contains(sf, sx, sy)) {
                occ[i] = 1.0;
                continue;
            }
            if matches!(spec.layout, Layout::TwoLayer { .. }) {
                // z-ordering: does the source camera see this same point?
                let hit_t = model.surface_hit(t, px, py)?;
                let (qx, qy, _) = model.project_into(s, &hit_t.world);
                let hit_s = model.surface_hit(s, qx, qy)?;
                let d = (hit_s.world - hit_t.world).norm();
                if d > 1e-6 * (1.0 + hit_t.world.norm()) {
                    occ[i] = 1.0;
                }
            }
        }
    }

    Ok(ScenePair {
        target: t,
        source: s,
        pose: rel,
        rigid,
        residual,
        full,
        occlusion: Mask::new(w, h, occ)?,
    })
}

/// Outcome of the generator self-check.
#[derive(Debug, Clone)]
pub struct SelfCheckReport {
    pub pass: bool,
    /// Max |I_t(p) - I_s(p + f_full(p))| over non-occluded pixels, with the
    /// source evaluated on the continuous model.
    pub max_photometric_residual: f64,
    /// Max |full - (rigid + residual)| over all pixels.
    pub max_decomposition_error: f64,
    /// Max deviation between the stored rigid flow and a fresh evaluation.
    pub max_rigid_op_error: f64,
    pub checked_pixels: usize,
    pub messages: Vec<String>,
}

pub const SELF_CHECK_PHOTOMETRIC_TOL: f64 = 1e-6;
pub const SELF_CHECK_RIGID_TOL: f64 = 1e-9;

/// Verifies the generated scene against its own continuous model: exact
/// photometric consistency along the full flow on non-occluded pixels, the
/// flow decomposition identity, and agreement of the stored rigid flow with
/// a fresh evaluation.
pub fn scene_self_check(scene: &Scene) -> SelfCheckReport {
    let spec = &scene.spec;
    let (w, h, c) = (spec.width, spec.height, spec.channels);
    let mut max_photo: f64 = 0.0;
    let mut max_decomp: f64 = 0.0;
    let mut max_rigid: f64 = 0.0;
    let mut checked = 0usize;
    let mut messages = Vec::new();

    for pair in &scene.pairs {
        let target = &scene.frames[pair.target];
        match rigid_flow(&scene.gt_depth[pair.target], &pair.pose, &spec.intrinsics) {
            Ok((fresh, _)) => {
                for i in 0..w * h {
                    max_rigid = max_rigid
                        .max((fresh.u[i] - pair.rigid.u[i]).abs())
                        .max((fresh.v[i] - pair.rigid.v[i]).abs());
                }
            }
            Err(e) => messages.push(format!(
                "pair ({}, {}): rigid flow re-evaluation failed: {e}",
                pair.target, pair.source
            )),
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                max_decomp = max_decomp
                    .max((pair.full.u[i] - (pair.rigid.u[i] + pair.residual.u[i])).abs())
                    .max((pair.full.v[i] - (pair.rigid.v[i] + pair.residual.v[i])).abs());
                if pair.occlusion.data[i] > 0.0 {
                    continue;
                }
                let (sx, sy) = (x as f64 + pair.full.u[i], y as f64 + pair.full.v[i]);
                for ch in 0..c {
                    match scene.model.frame_value(pair.source, ch, sx, sy) {
                        Ok(v) => {
                            let r = (target.at(x, y, ch) - v).abs();
                            max_photo = max_photo.max(r);
                            checked += 1;
                        }
                        Err(e) => messages.push(format!(
                            "pair ({}, {}): source evaluation failed at ({x}, {y}): {e}",
                            pair.target, pair.source
                        )),
                    }
                }
            }
        }
    }

    let pass = messages.is_empty()
        && max_photo < SELF_CHECK_PHOTOMETRIC_TOL
        && max_decomp == 0.0
        && max_rigid < SELF_CHECK_RIGID_TOL;
    if max_photo >= SELF_CHECK_PHOTOMETRIC_TOL {
        messages.push(format!(
            "photometric residual {max_photo:e} exceeds {SELF_CHECK_PHOTOMETRIC_TOL:e}"
        ));
    }
    SelfCheckReport {
        pass,
        max_photometric_residual: max_photo,
        max_decomposition_error: max_decomp,
        max_rigid_op_error: max_rigid,
        checked_pixels: checked,
        messages,
    }
}

// --- TOML (de)serialization of SceneSpec -----------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPose {
    rotation: [f64; 3],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSceneSpec {
    width: usize,
    height: usize,
    #[serde(default = "default_channels")]
    channels: usize,
    frames: usize,
    /// "fx fy cx cy".
    intrinsics: String,
    seed: u64,
    layout: Layout,
    #[serde(default)]
    texture: Option<TextureSpec>,
    #[serde(default)]
    poses: Vec<RawPose>,
    #[serde(default)]
    objects: Vec<MovingObject>,
}

fn default_channels() -> usize {
    1
}

impl SceneSpec {
    pub fn from_toml_str(text: &str) -> Result<SceneSpec> {
        let raw: RawSceneSpec = toml::from_str(text).map_err(|e| Error::Parse {
            path: "scene spec".into(),
            msg: e.to_string(),
        })?;
        let parts: Vec<f64> = raw
            .intrinsics
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: "scene spec".into(),
                msg: format!("intrinsics: {e}"),
            })?;
        if parts.len() != 4 {
            return Err(Error::Parse {
                path: "scene spec".into(),
                msg: format!("intrinsics wants 4 numbers `fx fy cx cy`, got {}", parts.len()),
            });
        }
        let spec = SceneSpec {
            width: raw.width,
            height: raw.height,
            channels: raw.channels,
            num_frames: raw.frames,
            intrinsics: CameraIntrinsics::new(parts[0], parts[1], parts[2], parts[3])?,
            layout: raw.layout,
            texture: raw.texture.unwrap_or_default(),
            poses: raw
                .poses
                .iter()
                .map(|p| PoseSE3::new(p.rotation, p.translation))
                .collect(),
            objects: raw.objects,
            seed: raw.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        let raw = RawSceneSpec {
            width: self.width,
            height: self.height,
            channels: self.channels,
            frames: self.num_frames,
            intrinsics: format!(
                "{} {} {} {}",
                self.intrinsics.fx, self.intrinsics.fy, self.intrinsics.cx, self.intrinsics.cy
            ),
            seed: self.seed,
            layout: self.layout,
            texture: Some(self.texture.clone()),
            poses: self
                .poses
                .iter()
                .map(|p| RawPose {
                    rotation: p.rotation,
                    translation: p.translation,
                })
                .collect(),
            objects: self.objects.clone(),
        };
        toml::to_string(&raw).expect("scene spec serialization")
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn basic_spec() -> SceneSpec {
        SceneSpec {
            width: 48,
            height: 32,
            channels: 1,
            num_frames: 2,
            intrinsics: CameraIntrinsics::new(50.0, 50.0, 23.5, 15.5).unwrap(),
            layout: Layout::FrontoParallel { depth: 10.0 },
            texture: TextureSpec::default(),
            poses: vec![
                PoseSE3::identity(),
                PoseSE3::new([0.0; 3], [0.2, 0.0, 0.0]),
            ],
            objects: vec![],
            seed: 7,
        }
    }

    #[test]
    fn static_scene_frames_identical() {
        let mut spec = basic_spec();
        spec.poses = vec![PoseSE3::identity(); 2];
        let scene = generate_scene(&spec).unwrap();
        assert_eq!(scene.frames[0], scene.frames[1]);
        for pair in &scene.pairs {
            assert!(pair.full.u.iter().chain(pair.full.v.iter()).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn translation_scene_closed_form_flow() {
        // fx = 50, depth 10, translation 0.2 -> uniform rigid flow (1, 0)
        // for the pair whose relative pose translates by +0.2.
        let spec = basic_spec();
        let scene = generate_scene(&spec).unwrap();
        let p01 = scene.pair(0, 1).unwrap();
        for i in 0..p01.rigid.u.len() {
            assert!((p01.rigid.u[i] - 1.0).abs() < 1e-9, "{}", p01.rigid.u[i]);
            assert!(p01.rigid.v[i].abs() < 1e-9);
        }
    }

    #[test]
    fn self_check_passes_and_detects_corruption() {
        let spec = basic_spec();
        let scene = generate_scene(&spec).unwrap();
        let report = scene_self_check(&scene);
        assert!(report.pass, "{:?}", report.messages);
        assert!(report.max_photometric_residual < 1e-6);

        let mut corrupted = scene.clone();
        for p in &mut corrupted.pairs {
            for u in &mut p.full.u {
                *u += 0.5;
            }
        }
        let report = scene_self_check(&corrupted);
        assert!(!report.pass);
    }

    #[test]
    fn moving_object_residual_and_occlusion() {
        let mut spec = basic_spec();
        spec.poses = vec![PoseSE3::identity(); 2];
        spec.objects = vec![MovingObject {
            rect: [12.0, 8.0, 12.0, 10.0],
            velocity: [3.0, 0.0],
        }];
        let scene = generate_scene(&spec).unwrap();
        let p01 = scene.pair(0, 1).unwrap();
        // Residual is (3, 0) inside the object, 0 outside.
        for y in 0..32 {
            for x in 0..48 {
                let i = y * 48 + x;
                let inside = (12..24).contains(&x) && (8..18).contains(&y);
                if inside {
                    assert!((p01.residual.u[i] - 3.0).abs() < 1e-12);
                } else {
                    assert_eq!(p01.residual.u[i], 0.0);
                    assert_eq!(p01.residual.v[i], 0.0);
                }
            }
        }
        // Occlusion strip: background pixels covered by the object at frame 1
        // (x in [24, 27), rows of the rect).
        for y in 8..18 {
            for x in 24..27 {
                assert_eq!(p01.occlusion.at(x, y), 1.0, "({x},{y})");
            }
            assert_eq!(p01.occlusion.at(20, y), 0.0);
        }
        let report = scene_self_check(&scene);
        assert!(report.pass, "{:?}", report.messages);
    }

    #[test]
    fn determinism_bit_identical() {
        let spec = basic_spec();
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.gt_depth, b.gt_depth);
        for (pa, pb) in a.pairs.iter().zip(&b.pairs) {
            assert_eq!(pa.full, pb.full);
            assert_eq!(pa.occlusion, pb.occlusion);
        }
    }

    #[test]
    fn out_of_bounds_object_rejected() {
        let mut spec = basic_spec();
        spec.objects = vec![MovingObject {
            rect: [40.0, 8.0, 12.0, 10.0],
            velocity: [1.0, 0.0],
        }];
        let err = generate_scene(&spec).unwrap_err();
        assert!(err.to_string().contains("rect"));
    }

    #[test]
    fn two_layer_scene_has_parallax_occlusion() {
        let mut spec = basic_spec();
        spec.layout = Layout::TwoLayer {
            bg_depth: 12.0,
            fg_depth: 6.0,
            fg_rect: [-1.0, -1.0, 2.0, 2.0],
        };
        spec.poses = vec![
            PoseSE3::identity(),
            PoseSE3::new([0.0; 3], [0.5, 0.0, 0.0]),
        ];
        let scene = generate_scene(&spec).unwrap();
        let report = scene_self_check(&scene);
        assert!(report.pass, "{:?}", report.messages);
        // Depth map carries both layers.
        let d = &scene.gt_depth[0];
        let dmin = d.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let dmax = d.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(dmin < 7.0 && dmax > 11.0);
        // Some pixel is occluded by the parallax of the nearer layer.
        let occ: f64 = scene.pairs.iter().map(|p| p.occlusion.data.iter().sum::<f64>()).sum();
        assert!(occ > 0.0);
    }

    #[test]
    fn toml_round_trip() {
        let mut spec = basic_spec();
        spec.objects = vec![MovingObject {
            rect: [10.0, 10.0, 8.0, 8.0],
            velocity: [2.0, -1.0],
        }];
        let text = spec.to_toml_string();
        let back = SceneSpec::from_toml_str(&text).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"
width = 32
height = 32
frames = 2
intrinsics = "50 50 15.5 15.5"
seed = 1
bogus = true

[layout]
kind = "fronto-parallel"
depth = 5.0
"#;
        assert!(SceneSpec::from_toml_str(text).is_err());
    }
}
