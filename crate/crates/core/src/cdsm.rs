//! Cross-domain spatial matching: camera feature maps are rotated into the
//! vehicle frame, collapsed over height, scattered onto the BEV grid by
//! distance range, refined, and concatenated with radar features.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{
    project_to_image, quat_chain_to_matrix, rotate_labels, rotation_index_map, AxisLabel, Direction, CAMERA_TO_BEV,
};
use crate::tensornet::{BevBackbone, BiFpn, Conv, LevelSet, ParamBuilder, Tape, Var, NO_SOURCE};
use crate::{AxisRotation, CameraCalib, Error, FovBox, OrientedTensor, Result, VcsPoint};

/// Forward-distance range `[near, far)` handled by one image level
/// (0 = P3, 1 = P4, ...).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelBin {
    pub level: usize,
    pub near: f64,
    pub far: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBinConfig {
    pub bins: Vec<LevelBin>,
}

impl Default for DistanceBinConfig {
    fn default() -> Self {
        DistanceBinConfig {
            bins: vec![
                LevelBin {
                    level: 0,
                    near: 40.0,
                    far: 80.0,
                },
                LevelBin {
                    level: 1,
                    near: 20.0,
                    far: 40.0,
                },
                LevelBin {
                    level: 2,
                    near: 0.0,
                    far: 20.0,
                },
            ],
        }
    }
}

impl DistanceBinConfig {
    /// Checks that the bins tile `[x_min, x_max)` without overlap and that a
    /// finer level never covers a nearer range than a coarser one.
    pub fn validate(&self, fov: &FovBox) -> Result<()> {
        if self.bins.is_empty() {
            return Err(Error::Config("distance bins are empty".into()));
        }
        let mut by_near = self.bins.clone();
        by_near.sort_by(|a, b| a.near.total_cmp(&b.near));
        let mut edge = fov.x_min;
        for b in &by_near {
            if b.far.is_nan() || b.near.is_nan() || b.far <= b.near {
                return Err(Error::Config(format!(
                    "empty bin [{}, {}) for level {}",
                    b.near, b.far, b.level
                )));
            }
            if (b.near - edge).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "bins leave a gap or overlap at {edge} m (next bin starts at {})",
                    b.near
                )));
            }
            edge = b.far;
        }
        if (edge - fov.x_max).abs() > 1e-9 {
            return Err(Error::Config(format!("bins end at {edge} m, FOV at {} m", fov.x_max)));
        }
        for w in by_near.windows(2) {
            if w[1].level >= w[0].level {
                return Err(Error::Config(format!(
                    "level {} covers a farther range than finer level {}",
                    w[1].level, w[0].level
                )));
            }
        }
        Ok(())
    }

    /// Levels used, ascending.
    pub fn levels(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.bins.iter().map(|b| b.level).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn level_for(&self, x: f64) -> Option<usize> {
        self.bins.iter().find(|b| x >= b.near && x < b.far).map(|b| b.level)
    }
}

/// BEV cell grid over the FOV footprint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevGrid {
    pub fov: FovBox,
    pub nx: usize,
    pub ny: usize,
}

impl Default for BevGrid {
    fn default() -> Self {
        BevGrid {
            fov: FovBox::default(),
            nx: 80,
            ny: 80,
        }
    }
}

impl BevGrid {
    pub fn cell_size(&self) -> (f64, f64) {
        let e = self.fov.extent();
        (e[0] / self.nx as f64, e[1] / self.ny as f64)
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let (dx, dy) = self.cell_size();
        (
            self.fov.x_min + (ix as f64 + 0.5) * dx,
            self.fov.y_min + (iy as f64 + 0.5) * dy,
        )
    }

    /// Cell containing the planar point, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (dx, dy) = self.cell_size();
        let ix = ((x - self.fov.x_min) / dx).floor();
        let iy = ((y - self.fov.y_min) / dy).floor();
        (ix >= 0.0 && iy >= 0.0 && (ix as usize) < self.nx && (iy as usize) < self.ny)
            .then_some((ix as usize, iy as usize))
    }
}

/// Cells whose center, lifted to camera height, projects in front of the
/// camera and between the left and right image borders.
#[derive(Clone, Debug, PartialEq)]
pub struct FovMask {
    pub grid: BevGrid,
    pub cells: Vec<bool>,
}

impl FovMask {
    pub fn from_calib(calib: &CameraCalib, grid: &BevGrid, image_width: usize) -> Self {
        let z = calib.pose.translation.z;
        let mut cells = vec![false; grid.nx * grid.ny];
        for ix in 0..grid.nx {
            for iy in 0..grid.ny {
                let (x, y) = grid.cell_center(ix, iy);
                if let Ok(p) = project_to_image(&VcsPoint::new(x, y, z), calib) {
                    cells[ix * grid.ny + iy] = p.u >= 0.0 && p.u < image_width as f64;
                }
            }
        }
        FovMask { grid: *grid, cells }
    }

    pub fn all(grid: &BevGrid, value: bool) -> Self {
        FovMask {
            grid: *grid,
            cells: vec![value; grid.nx * grid.ny],
        }
    }

    pub fn get(&self, ix: usize, iy: usize) -> bool {
        self.cells[ix * self.grid.ny + iy]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// A camera level after index rotation.
#[derive(Clone, Debug)]
pub struct AlignedLevel {
    pub var: Var,
    pub labels: Vec<AxisLabel>,
    pub stride: usize,
}

/// Rotates each `(rows, cols, features)` level by `chain`.
pub fn align_camera_features(tape: &mut Tape, levels: &LevelSet, chain: &[AxisRotation]) -> Result<Vec<AlignedLevel>> {
    let matrix = quat_chain_to_matrix(chain)?;
    let labels = rotate_labels(&OrientedTensor::camera_labels(), matrix);
    levels
        .levels
        .iter()
        .zip(&levels.strides)
        .map(|(&v, &stride)| {
            let layout = rotation_index_map(tape.shape(v), matrix)?;
            let var = tape.gather(v, Arc::new(layout.gather), &layout.out_shape)?;
            Ok(AlignedLevel {
                var,
                labels: labels.clone(),
                stride,
            })
        })
        .collect()
}

/// Position of the image-column axis and whether its index runs opposite to
/// the image column order.
fn column_axis(labels: &[AxisLabel]) -> Result<(usize, bool)> {
    labels
        .iter()
        .take(3)
        .position(|l| l.direction() == Some(Direction::Y) && !l.is_channel())
        .map(|a| (a, labels[a].is_positive()))
        .ok_or_else(|| Error::Shape(format!("no lateral axis among labels {labels:?}")))
}

fn vertical_axis(labels: &[AxisLabel]) -> Result<usize> {
    labels
        .iter()
        .take(3)
        .position(|l| l.direction() == Some(Direction::Z) && !l.is_channel())
        .ok_or_else(|| Error::Shape(format!("no vertical axis among labels {labels:?}")))
}

/// Scatters aligned camera levels onto the BEV grid: every masked cell in a
/// level's distance bin receives the height-collapsed feature column of the
/// image column its center projects to. Output is `(nx, ny, features)`.
pub fn aggregate_to_bev(
    tape: &mut Tape,
    aligned: &[AlignedLevel],
    calib: &CameraCalib,
    bins: &DistanceBinConfig,
    mask: &FovMask,
) -> Result<Var> {
    if bins.bins.is_empty() {
        return Err(Error::Config("distance bins are empty".into()));
    }
    let grid = mask.grid;
    let z = calib.pose.translation.z;
    let mut out: Option<Var> = None;
    let mut channels = None;
    for level in bins.levels() {
        let a = aligned.get(level).ok_or_else(|| {
            Error::Config(format!(
                "distance bins use level {level}, only {} aligned",
                aligned.len()
            ))
        })?;
        let vert = vertical_axis(&a.labels)?;
        let (col_axis, reversed) = column_axis(&a.labels)?;
        let collapsed = tape.max_axis(a.var, vert)?;
        let col_axis = if col_axis > vert { col_axis - 1 } else { col_axis };
        let s = tape.shape(collapsed).to_vec();
        if s.len() != 2 {
            return Err(Error::Shape(format!("aligned level {level} collapses to {s:?}")));
        }
        let (width, feat) = (s[col_axis], s[1 - col_axis]);
        if *channels.get_or_insert(feat) != feat {
            return Err(Error::Shape(format!(
                "level {level} has {feat} features, expected {}",
                channels.unwrap()
            )));
        }
        let mut index = vec![NO_SOURCE; grid.nx * grid.ny * feat];
        for ix in 0..grid.nx {
            for iy in 0..grid.ny {
                let (x, y) = grid.cell_center(ix, iy);
                if !mask.get(ix, iy) || bins.level_for(x) != Some(level) {
                    continue;
                }
                let Ok(p) = project_to_image(&VcsPoint::new(x, y, z), calib) else {
                    continue;
                };
                let c = (p.u / a.stride as f64).floor();
                if c < 0.0 || c as usize >= width {
                    continue;
                }
                let c = if reversed { width - 1 - c as usize } else { c as usize };
                let base = (ix * grid.ny + iy) * feat;
                for f in 0..feat {
                    index[base + f] = if col_axis == 0 { c * feat + f } else { f * width + c };
                }
            }
        }
        let placed = tape.gather(collapsed, Arc::new(index), &[grid.nx, grid.ny, feat])?;
        out = Some(match out {
            None => placed,
            Some(o) => tape.add(o, placed)?,
        });
    }
    Ok(out.expect("bins are non-empty"))
}

/// Concatenates camera and radar levels per level, then runs one BiFPN.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub bifpn: BiFpn,
}

impl Fusion {
    pub fn new(pb: &mut ParamBuilder, name: &str, levels: usize, channels: usize, repeats: usize) -> Result<Self> {
        Ok(Fusion {
            bifpn: BiFpn::new(pb, name, levels, channels, repeats)?,
        })
    }

    pub fn concat(tape: &mut Tape, cam: &LevelSet, radar: &LevelSet) -> Result<LevelSet> {
        if cam.len() != radar.len() {
            return Err(Error::Shape(format!(
                "{} camera levels vs {} radar levels",
                cam.len(),
                radar.len()
            )));
        }
        let mut levels = Vec::with_capacity(cam.len());
        for (i, (&c, &r)) in cam.levels.iter().zip(&radar.levels).enumerate() {
            let (cs, rs) = (tape.shape(c), tape.shape(r));
            if cs.len() != 3 || rs.len() != 3 || cs[..2] != rs[..2] {
                return Err(Error::Shape(format!("level {i}: camera {cs:?} vs radar {rs:?}")));
            }
            levels.push(tape.concat(&[c, r])?);
        }
        Ok(LevelSet {
            levels,
            strides: radar.strides.clone(),
        })
    }

    pub fn forward(&self, tape: &mut Tape, cam: &LevelSet, radar: &LevelSet) -> Result<LevelSet> {
        let joined = Self::concat(tape, cam, radar)?;
        self.bifpn.forward(tape, &joined)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdsmConfig {
    pub chain: Vec<AxisRotation>,
    pub bins: DistanceBinConfig,
    /// Feature width of the camera BEV map and its refined levels.
    pub cam_channels: usize,
    pub fusion_repeats: usize,
}

impl Default for CdsmConfig {
    fn default() -> Self {
        CdsmConfig {
            chain: CAMERA_TO_BEV.to_vec(),
            bins: DistanceBinConfig::default(),
            cam_channels: 64,
            fusion_repeats: 1,
        }
    }
}

/// Learned parts of the block: per-level projections, BEV refinement and,
/// when fusing with radar, the fusion BiFPN.
#[derive(Clone, Debug)]
pub struct Cdsm {
    pub config: CdsmConfig,
    /// Projection of each used image level, indexed like `bins.levels()`.
    pub project: Vec<(usize, Conv)>,
    pub refine: BevBackbone,
    pub fusion: Option<Fusion>,
}

impl Cdsm {
    /// Without `radar_channels` only the camera path is built.
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        config: CdsmConfig,
        image_channels: usize,
        radar_channels: Option<usize>,
    ) -> Result<Self> {
        let mut s = pb.scope(name);
        let project = config
            .bins
            .levels()
            .into_iter()
            .map(|l| {
                Ok((
                    l,
                    Conv::new(
                        &mut s,
                        &format!("proj{l}"),
                        1,
                        image_channels,
                        config.cam_channels,
                        1,
                        true,
                    )?,
                ))
            })
            .collect::<Result<_>>()?;
        let refine = BevBackbone::new(&mut s, "refine", config.cam_channels, config.cam_channels)?;
        let fusion = radar_channels
            .map(|rc| Fusion::new(&mut s, "fusion", 3, config.cam_channels + rc, config.fusion_repeats))
            .transpose()?;
        Ok(Cdsm {
            config,
            project,
            refine,
            fusion,
        })
    }

    /// Camera BEV map `(nx, ny, cam_channels)` from image levels.
    pub fn camera_bev(
        &self,
        tape: &mut Tape,
        image_levels: &LevelSet,
        calib: &CameraCalib,
        mask: &FovMask,
    ) -> Result<Var> {
        let mut projected = image_levels.clone();
        for (l, conv) in &self.project {
            let v = *projected
                .levels
                .get(*l)
                .ok_or_else(|| Error::Config(format!("image level {l} missing")))?;
            projected.levels[*l] = conv.forward(tape, v)?;
        }
        let used = self.project.iter().map(|(l, _)| l + 1).max().unwrap_or(0);
        let aligned = align_camera_features(tape, &projected.truncate(used), &self.config.chain)?;
        aggregate_to_bev(tape, &aligned, calib, &self.config.bins, mask)
    }

    /// Refined camera BEV levels L1..L3.
    pub fn camera_levels(
        &self,
        tape: &mut Tape,
        image_levels: &LevelSet,
        calib: &CameraCalib,
        mask: &FovMask,
    ) -> Result<LevelSet> {
        let bev = self.camera_bev(tape, image_levels, calib, mask)?;
        self.refine.forward(tape, bev)
    }

    /// Fused BEV levels L1..L3.
    pub fn forward(
        &self,
        tape: &mut Tape,
        image_levels: &LevelSet,
        radar_levels: &LevelSet,
        calib: &CameraCalib,
        mask: &FovMask,
    ) -> Result<LevelSet> {
        let fusion = self
            .fusion
            .as_ref()
            .ok_or_else(|| Error::Config("CDSM block was built without a fusion stage".into()))?;
        let cam = self.camera_levels(tape, image_levels, calib, mask)?;
        fusion.forward(tape, &cam, radar_levels)
    }
}
