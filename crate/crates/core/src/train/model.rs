use serde::{Deserialize, Serialize};

use super::Regime;
use crate::cdsm::{BevGrid, Cdsm, CdsmConfig, FovMask};
use crate::dataio::{clip_pointcloud, filter_labels, letterbox, DetectionFile, LetterboxTransform, CAR};
use crate::detector::{
    assign_2d, assign_3d, focal_loss_logits, generate_anchors_2d, generate_anchors_3d, postprocess_2d, postprocess_3d,
    weighted_mse, Anchor2D, Anchor3D, AnchorConfig, AnchorTarget, AssignConfig, FocalParams, Head, HeadOutput,
    LevelOutput, PostprocessConfig, DELTAS_2D, DELTAS_3D,
};
use crate::geometry::cuboid_to_bbox2d;
use crate::tensornet::{
    BevBackbone, BiFpn, Gradients, ImageBackbone, LevelSet, ParamBuilder, ParamStore, Tape, Var, BEV_STRIDES,
    IMAGE_MAX_STRIDE, IMAGE_STRIDES,
};
use crate::voxelizer::{stack_z, voxelize, Vfe, VoxelGridSpec, VoxelizedSample};
use crate::{Box2D, Box3D, CameraCalib, Error, Result, Scene, Tensor};

/// Pixel normalization applied after letterboxing: `(v - mean) / std`.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub image_channels: usize,
    pub image_bifpn_repeats: usize,
    pub vfe_width: usize,
    pub radar_channels: usize,
    pub radar_bifpn_repeats: usize,
    /// BiFPN repeats over the camera-only BEV levels.
    pub cam_bev_bifpn_repeats: usize,
    pub cdsm: CdsmConfig,
    pub voxels: VoxelGridSpec,
    pub anchors: AnchorConfig,
    pub assign: AssignConfig,
    pub postprocess: PostprocessConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_width: 512,
            image_height: 384,
            image_channels: 64,
            image_bifpn_repeats: 4,
            vfe_width: 32,
            radar_channels: 64,
            radar_bifpn_repeats: 1,
            cam_bev_bifpn_repeats: 1,
            cdsm: CdsmConfig::default(),
            voxels: VoxelGridSpec::default(),
            anchors: AnchorConfig::default(),
            assign: AssignConfig::default(),
            postprocess: PostprocessConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.image_width.is_multiple_of(IMAGE_MAX_STRIDE)
            || !self.image_height.is_multiple_of(IMAGE_MAX_STRIDE)
            || self.image_width == 0
            || self.image_height == 0
        {
            return Err(Error::Config(format!(
                "network input {}x{} must be a positive multiple of {IMAGE_MAX_STRIDE}",
                self.image_width, self.image_height
            )));
        }
        if [
            self.image_channels,
            self.vfe_width,
            self.radar_channels,
            self.cdsm.cam_channels,
        ]
        .contains(&0)
        {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        self.voxels.validate()?;
        let [nx, ny, _] = self.voxels.dims();
        if nx % 4 != 0 || ny % 4 != 0 {
            return Err(Error::Config(format!("BEV grid {nx}x{ny} must be divisible by 4")));
        }
        self.cdsm.bins.validate(&self.voxels.fov)?;
        if self.cdsm.bins.levels().iter().any(|&l| l >= IMAGE_STRIDES.len()) {
            return Err(Error::Config("distance bins reference a missing image level".into()));
        }
        self.anchors.validate()
    }

    pub fn grid(&self) -> BevGrid {
        let [nx, ny, _] = self.voxels.dims();
        BevGrid {
            fov: self.voxels.fov,
            nx,
            ny,
        }
    }
}

#[derive(Clone, Debug)]
struct CameraBranch {
    backbone: ImageBackbone,
    bifpn: BiFpn,
}

impl CameraBranch {
    fn forward(&self, tape: &mut Tape, image: Var) -> Result<LevelSet> {
        let l = self.backbone.forward(tape, image)?;
        self.bifpn.forward(tape, &l)
    }
}

#[derive(Clone, Debug)]
struct RadarBranch {
    vfe: Vfe,
    backbone: BevBackbone,
    bifpn: BiFpn,
}

impl RadarBranch {
    fn forward(&self, tape: &mut Tape, voxels: &VoxelizedSample) -> Result<LevelSet> {
        let f = self.vfe.forward(tape, voxels)?;
        let grid = stack_z(tape, voxels, f)?;
        let l = self.backbone.forward(tape, grid)?;
        self.bifpn.forward(tape, &l)
    }
}

/// Concatenated per-anchor training targets over all head levels.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub cls: Vec<AnchorTarget>,
    pub deltas: Vec<f64>,
}

/// A scene turned into network inputs for one model.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub scene_id: String,
    pub image: Option<Tensor>,
    /// Calibration of the letterboxed network input.
    pub calib: CameraCalib,
    pub letterbox: LetterboxTransform,
    pub mask: Option<FovMask>,
    pub voxels: Option<VoxelizedSample>,
    /// Regime-filtered ground truth.
    pub gt3d: Vec<Box3D>,
    /// Projected ground truth in network-input pixels.
    pub gt2d: Vec<Box2D>,
    pub targets: Option<Targets>,
}

#[derive(Clone, Debug)]
pub struct SampleLoss {
    pub cls: f64,
    pub reg: f64,
    pub grads: Option<Gradients>,
}

impl SampleLoss {
    pub fn total(&self) -> f64 {
        self.cls + self.reg
    }
}

/// Parameters plus the structure that uses them for one regime.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub regime: Regime,
    pub store: ParamStore,
    cam: Option<CameraBranch>,
    radar: Option<RadarBranch>,
    cdsm: Option<Cdsm>,
    cam_bev_bifpn: Option<BiFpn>,
    head: Head,
    anchors2d: Vec<Vec<Anchor2D>>,
    anchors3d: Vec<Vec<Anchor3D>>,
}

impl Model {
    pub fn new(config: &ModelConfig, regime: Regime, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut pb = ParamBuilder::new(&mut store, seed);
        let cam = if regime.uses_camera() {
            let mut s = pb.scope("cam");
            Some(CameraBranch {
                backbone: ImageBackbone::new(&mut s, "backbone", 3, config.image_channels)?,
                bifpn: BiFpn::new(
                    &mut s,
                    "bifpn",
                    IMAGE_STRIDES.len(),
                    config.image_channels,
                    config.image_bifpn_repeats,
                )?,
            })
        } else {
            None
        };
        let radar = if regime.uses_radar() {
            let mut s = pb.scope("radar");
            let nz = config.voxels.dims()[2];
            Some(RadarBranch {
                vfe: Vfe::new(&mut s, "vfe", config.vfe_width)?,
                backbone: BevBackbone::new(&mut s, "backbone", nz * config.vfe_width, config.radar_channels)?,
                bifpn: BiFpn::new(
                    &mut s,
                    "bifpn",
                    BEV_STRIDES.len(),
                    config.radar_channels,
                    config.radar_bifpn_repeats,
                )?,
            })
        } else {
            None
        };
        let cdsm = if regime.is_3d() && regime.uses_camera() {
            let radar_channels = regime.is_fusion().then_some(config.radar_channels);
            Some(Cdsm::new(
                &mut pb,
                "cdsm",
                config.cdsm.clone(),
                config.image_channels,
                radar_channels,
            )?)
        } else {
            None
        };
        let cam_bev_bifpn = if regime == Regime::Cam3d {
            Some(BiFpn::new(
                &mut pb,
                "cam3d_bifpn",
                BEV_STRIDES.len(),
                config.cdsm.cam_channels,
                config.cam_bev_bifpn_repeats,
            )?)
        } else {
            None
        };
        let (head_channels, deltas) = match regime {
            Regime::Cam2d => (config.image_channels, DELTAS_2D),
            Regime::Cam3d => (config.cdsm.cam_channels, DELTAS_3D),
            Regime::Radar3d => (config.radar_channels, DELTAS_3D),
            Regime::FusionFrozen | Regime::FusionFinetune => {
                (config.cdsm.cam_channels + config.radar_channels, DELTAS_3D)
            }
        };
        let head_name = match regime {
            Regime::FusionFrozen | Regime::FusionFinetune => "head_fusion".to_string(),
            r => format!("head_{r}"),
        };
        let head = Head::new(&mut pb, &head_name, head_channels, deltas)?;
        store.freeze_prefixes(regime.frozen_prefixes());

        let (anchors2d, anchors3d) = if regime.is_3d() {
            let grid = config.grid();
            let a = BEV_STRIDES
                .iter()
                .map(|&s| generate_anchors_3d(grid.nx / s, grid.ny / s, &grid, &config.anchors))
                .collect();
            (Vec::new(), a)
        } else {
            let a = IMAGE_STRIDES
                .iter()
                .map(|&s| generate_anchors_2d(config.image_height / s, config.image_width / s, s, &config.anchors))
                .collect();
            (a, Vec::new())
        };
        Ok(Model {
            config: config.clone(),
            regime,
            store,
            cam,
            radar,
            cdsm,
            cam_bev_bifpn,
            head,
            anchors2d,
            anchors3d,
        })
    }

    /// Copies every parameter from `other` that exists here, by name.
    pub fn load_params(&mut self, other: &ParamStore, prefixes: &[&str]) -> Result<usize> {
        self.store.load_matching(other, prefixes)
    }

    /// Rebuilds a model from a checkpoint that must cover every parameter.
    pub fn from_checkpoint(config: &ModelConfig, regime: Regime, ckpt: &ParamStore) -> Result<Self> {
        let mut m = Model::new(config, regime, 0)?;
        let n = m.load_params(ckpt, &[""])?;
        if n != m.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint covers {n} of {} {} parameters",
                m.store.len(),
                regime
            )));
        }
        Ok(m)
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors2d.iter().map(Vec::len).sum::<usize>() + self.anchors3d.iter().map(Vec::len).sum::<usize>()
    }

    /// Letterboxes, voxelizes and filters a scene; computes anchor targets
    /// when `with_targets`.
    pub fn prepare(&self, scene: &Scene, with_targets: bool) -> Result<Prepared> {
        let cfg = &self.config;
        let (img, lb) = letterbox(&scene.image, cfg.image_width, cfg.image_height)?;
        let calib = scene.calib.resized(lb.scale, lb.pad_x, lb.pad_y);
        let image = self.regime.uses_camera().then(|| {
            let data = img.data().iter().map(|v| (v - PIXEL_MEAN) / PIXEL_STD).collect();
            Tensor::from_vec(&[cfg.image_height, cfg.image_width, 3], data).expect("image layout")
        });
        let mask = (self.regime.is_3d() && self.regime.uses_camera())
            .then(|| FovMask::from_calib(&calib, &cfg.grid(), cfg.image_width));
        let voxels = if self.regime.uses_radar() {
            Some(voxelize(&clip_pointcloud(&scene.points, &cfg.voxels.fov), &cfg.voxels)?)
        } else {
            None
        };
        let labels = filter_labels(&scene.labels, self.regime.filter(), CAR, &cfg.voxels.fov);
        let gt3d: Vec<Box3D> = labels.iter().map(|l| l.box3d).collect();
        let gt2d: Vec<Box2D> = if self.regime.is_3d() {
            Vec::new()
        } else {
            gt3d.iter()
                .filter_map(|b| cuboid_to_bbox2d(b, &calib, (cfg.image_width, cfg.image_height)))
                .filter(|b| b.width() >= 1.0 && b.height() >= 1.0)
                .collect()
        };
        let targets = if with_targets {
            Some(self.targets(&gt3d, &gt2d)?)
        } else {
            None
        };
        Ok(Prepared {
            scene_id: scene.id.clone(),
            image,
            calib,
            letterbox: lb,
            mask,
            voxels,
            gt3d,
            gt2d,
            targets,
        })
    }

    fn targets(&self, gt3d: &[Box3D], gt2d: &[Box2D]) -> Result<Targets> {
        let mut cls = Vec::new();
        let mut deltas = Vec::new();
        if self.regime.is_3d() {
            let cell = self.config.grid().cell_size().0;
            for (anchors, &s) in self.anchors3d.iter().zip(&BEV_STRIDES) {
                let a = assign_3d(gt3d, anchors, cell * s as f64, &self.config.assign)?;
                cls.extend(a.targets);
                deltas.extend(a.deltas);
            }
        } else {
            let all: Vec<Anchor2D> = self.anchors2d.iter().flatten().copied().collect();
            let a = assign_2d(gt2d, &all, &self.config.assign)?;
            cls = a.targets;
            deltas = a.deltas;
        }
        Ok(Targets { cls, deltas })
    }

    /// Head outputs per level.
    pub fn forward(&self, tape: &mut Tape, p: &Prepared) -> Result<Vec<HeadOutput>> {
        let missing = |what: &str| Error::Config(format!("prepared sample lacks {what} for {}", self.regime));
        let image = |tape: &mut Tape| -> Result<Var> {
            let img = p.image.as_ref().ok_or_else(|| missing("an image"))?;
            Ok(tape.input(img.clone()))
        };
        let levels = match self.regime {
            Regime::Cam2d => {
                let x = image(tape)?;
                self.cam.as_ref().unwrap().forward(tape, x)?
            }
            Regime::Cam3d => {
                let x = image(tape)?;
                let il = self.cam.as_ref().unwrap().forward(tape, x)?;
                let mask = p.mask.as_ref().ok_or_else(|| missing("a FOV mask"))?;
                let bev = self.cdsm.as_ref().unwrap().camera_levels(tape, &il, &p.calib, mask)?;
                self.cam_bev_bifpn.as_ref().unwrap().forward(tape, &bev)?
            }
            Regime::Radar3d => {
                let v = p.voxels.as_ref().ok_or_else(|| missing("voxels"))?;
                self.radar.as_ref().unwrap().forward(tape, v)?
            }
            Regime::FusionFrozen | Regime::FusionFinetune => {
                let x = image(tape)?;
                let il = self.cam.as_ref().unwrap().forward(tape, x)?;
                let v = p.voxels.as_ref().ok_or_else(|| missing("voxels"))?;
                let rl = self.radar.as_ref().unwrap().forward(tape, v)?;
                let mask = p.mask.as_ref().ok_or_else(|| missing("a FOV mask"))?;
                self.cdsm.as_ref().unwrap().forward(tape, &il, &rl, &p.calib, mask)?
            }
        };
        self.head.forward(tape, &levels)
    }

    /// Classification plus regression loss of one sample, with parameter
    /// gradients when `backward`.
    pub fn sample_loss(&self, p: &Prepared, focal: FocalParams, weights: &[f64], backward: bool) -> Result<SampleLoss> {
        let targets = p
            .targets
            .as_ref()
            .ok_or_else(|| Error::Config(format!("sample {} has no targets", p.scene_id)))?;
        let mut tape = Tape::new(&self.store);
        let outs = self.forward(&mut tape, p)?;
        let logits: Vec<f64> = outs.iter().flat_map(|o| tape.value(o.logits).data().to_vec()).collect();
        let deltas: Vec<f64> = outs.iter().flat_map(|o| tape.value(o.deltas).data().to_vec()).collect();
        if logits.len() != targets.cls.len() || deltas.len() != targets.deltas.len() {
            return Err(Error::Shape(format!(
                "{} logits for {} targets",
                logits.len(),
                targets.cls.len()
            )));
        }
        let (cls, gl) = focal_loss_logits(&logits, &targets.cls, focal);
        let (reg, gd) = weighted_mse(&deltas, &targets.deltas, &targets.cls, weights);
        let grads = if backward {
            let mut seeds = Vec::with_capacity(2 * outs.len());
            let (mut ol, mut od) = (0, 0);
            for o in &outs {
                let sl = tape.shape(o.logits).to_vec();
                let nl: usize = sl.iter().product();
                seeds.push((o.logits, Tensor::from_vec(&sl, gl[ol..ol + nl].to_vec())?));
                ol += nl;
                let sd = tape.shape(o.deltas).to_vec();
                let nd: usize = sd.iter().product();
                seeds.push((o.deltas, Tensor::from_vec(&sd, gd[od..od + nd].to_vec())?));
                od += nd;
            }
            let refs: Vec<(Var, &Tensor)> = seeds.iter().map(|(v, t)| (*v, t)).collect();
            Some(tape.backward(&refs)?)
        } else {
            None
        };
        Ok(SampleLoss { cls, reg, grads })
    }

    /// Decoded detections: 3D boxes in the vehicle frame, or 2D boxes in
    /// original image pixels.
    pub fn detect(&self, p: &Prepared) -> Result<DetectionFile> {
        let mut tape = Tape::new(&self.store);
        let outs = self.forward(&mut tape, p)?;
        let pp = &self.config.postprocess;
        let mut file = DetectionFile {
            scene_id: p.scene_id.clone(),
            boxes3d: Vec::new(),
            boxes2d: Vec::new(),
        };
        if self.regime.is_3d() {
            let levels: Vec<LevelOutput<'_, Anchor3D>> = outs
                .iter()
                .zip(&self.anchors3d)
                .map(|(o, a)| LevelOutput {
                    logits: tape.value(o.logits).data(),
                    deltas: tape.value(o.deltas).data(),
                    anchors: a,
                })
                .collect();
            file.boxes3d = postprocess_3d(&levels, CAR, pp);
        } else {
            let levels: Vec<LevelOutput<'_, Anchor2D>> = outs
                .iter()
                .zip(&self.anchors2d)
                .map(|(o, a)| LevelOutput {
                    logits: tape.value(o.logits).data(),
                    deltas: tape.value(o.deltas).data(),
                    anchors: a,
                })
                .collect();
            file.boxes2d = postprocess_2d(&levels, CAR, pp)
                .iter()
                .map(|b| p.letterbox.inverse_box(b))
                .collect();
        }
        Ok(file)
    }

    pub fn infer(&self, scene: &Scene) -> Result<DetectionFile> {
        self.detect(&self.prepare(scene, false)?)
    }
}
