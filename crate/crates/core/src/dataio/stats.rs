use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::preprocess::MIN_VISIBILITY;
use super::Scene;

/// Label evidence counts for one class (or all classes).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub total_labels: u64,
    pub visible_over_40: u64,
    pub with_lidar: u64,
    pub with_radar: u64,
    /// Mean over all labels of the class, including those without points.
    pub mean_lidar_points: f64,
    pub mean_radar_points: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub scenes: u64,
    pub all: ClassStats,
    pub per_class: BTreeMap<u32, ClassStats>,
    pub mean_radar_points_per_sample: f64,
    pub mean_lidar_points_per_sample: f64,
}

#[derive(Default)]
struct Acc {
    total: u64,
    vis: u64,
    lidar: u64,
    radar: u64,
    lidar_sum: u64,
    radar_sum: u64,
}

impl Acc {
    fn finish(&self) -> ClassStats {
        let mean = |s: u64| {
            if self.total == 0 {
                0.0
            } else {
                s as f64 / self.total as f64
            }
        };
        ClassStats {
            total_labels: self.total,
            visible_over_40: self.vis,
            with_lidar: self.lidar,
            with_radar: self.radar,
            mean_lidar_points: mean(self.lidar_sum),
            mean_radar_points: mean(self.radar_sum),
        }
    }
}

pub fn dataset_stats(scenes: &[Scene]) -> DatasetStats {
    let mut all = Acc::default();
    let mut per: BTreeMap<u32, Acc> = BTreeMap::new();
    let (mut radar_pts, mut lidar_pts) = (0usize, 0usize);
    for s in scenes {
        radar_pts += s.points.len();
        lidar_pts += s.lidar.len();
        for l in &s.labels {
            for acc in [&mut all, per.entry(l.class_id()).or_default()] {
                acc.total += 1;
                acc.vis += (l.visibility > MIN_VISIBILITY) as u64;
                acc.lidar += (l.n_lidar_points > 0) as u64;
                acc.radar += (l.n_radar_points > 0) as u64;
                acc.lidar_sum += l.n_lidar_points as u64;
                acc.radar_sum += l.n_radar_points as u64;
            }
        }
    }
    let n = scenes.len();
    let per_sample = |s: usize| if n == 0 { 0.0 } else { s as f64 / n as f64 };
    DatasetStats {
        scenes: n as u64,
        all: all.finish(),
        per_class: per.into_iter().map(|(k, v)| (k, v.finish())).collect(),
        mean_radar_points_per_sample: per_sample(radar_pts),
        mean_lidar_points_per_sample: per_sample(lidar_pts),
    }
}
