use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::ImageGroup;
use super::image::ImageTensor;
use super::view::ViewLabel;
use crate::error::{Error, Result};

/// The unit of supervision: generate `target_image` (seen from `target_view`)
/// from `cond_image` (seen from `cond_view`).
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub cond_image: Arc<ImageTensor>,
    pub target_image: Arc<ImageTensor>,
    pub target_view: ViewLabel,
    pub cond_view: ViewLabel,
    pub group_id: String,
    pub shape_class: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingTask {
    FromFront,
    FromSide,
}

impl PairingTask {
    pub const ALL: [PairingTask; 2] = [PairingTask::FromFront, PairingTask::FromSide];

    pub fn cond_view(self) -> ViewLabel {
        match self {
            PairingTask::FromFront => ViewLabel::Front,
            PairingTask::FromSide => ViewLabel::Side,
        }
    }

    pub fn target_views(self) -> [ViewLabel; 2] {
        match self {
            PairingTask::FromFront => [ViewLabel::Side, ViewLabel::Back],
            PairingTask::FromSide => [ViewLabel::Front, ViewLabel::Back],
        }
    }
}

impl FromStr for PairingTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "from_front" => Ok(PairingTask::FromFront),
            "from_side" => Ok(PairingTask::FromSide),
            other => Err(Error::InvalidArgument(format!(
                "unknown pairing task {other:?}"
            ))),
        }
    }
}

/// Builds the two samples of `task` for a complete group, images resized to `size`.
pub fn make_pairs(
    group: &ImageGroup,
    task: PairingTask,
    size: usize,
) -> Result<Vec<TrainingSample>> {
    if let Some(missing) = group.missing_view() {
        return Err(Error::IncompleteGroup {
            group_id: group.group_id.clone(),
            missing: missing.to_string(),
        });
    }
    let cond_view = task.cond_view();
    let cond_image = Arc::new(group.load_view(cond_view, size)?);
    task.target_views()
        .into_iter()
        .map(|target_view| {
            Ok(TrainingSample {
                cond_image: Arc::clone(&cond_image),
                target_image: Arc::new(group.load_view(target_view, size)?),
                target_view,
                cond_view,
                group_id: group.group_id.clone(),
                shape_class: group.shape_class(),
            })
        })
        .collect()
}

/// All samples of all groups for the given tasks, loading each view once.
pub fn make_all_pairs(
    groups: &[ImageGroup],
    tasks: &[PairingTask],
    size: usize,
) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for group in groups {
        if let Some(missing) = group.missing_view() {
            return Err(Error::IncompleteGroup {
                group_id: group.group_id.clone(),
                missing: missing.to_string(),
            });
        }
        let mut cache: BTreeMap<ViewLabel, Arc<ImageTensor>> = BTreeMap::new();
        for view in ViewLabel::ALL {
            cache.insert(view, Arc::new(group.load_view(view, size)?));
        }
        for &task in tasks {
            for target_view in task.target_views() {
                out.push(TrainingSample {
                    cond_image: Arc::clone(&cache[&task.cond_view()]),
                    target_image: Arc::clone(&cache[&target_view]),
                    target_view,
                    cond_view: task.cond_view(),
                    group_id: group.group_id.clone(),
                    shape_class: group.shape_class(),
                });
            }
        }
    }
    Ok(out)
}

/// Group-level shuffle-then-cut split. The test side gets `round(n * test_fraction)`
/// groups, clamped so both sides are non-empty.
pub fn split_dataset(
    groups: &[ImageGroup],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<ImageGroup>, Vec<ImageGroup>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Domain {
            context: "split_dataset",
            value: test_fraction,
            expected: "0 < test_fraction < 1",
        });
    }
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 groups to split, got {}",
            groups.len()
        )));
    }
    let n = groups.len();
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order[..n_test].iter().map(|&i| groups[i].clone()).collect();
    let train = order[n_test..].iter().map(|&i| groups[i].clone()).collect();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::dataset::{dataset_scenes, group_id};
    use std::collections::BTreeSet;

    fn groups(n: usize) -> Vec<ImageGroup> {
        dataset_scenes(n, 4)
            .iter()
            .enumerate()
            .map(|(i, s)| ImageGroup::from_scene(group_id(i), s, 64).unwrap())
            .collect()
    }

    #[test]
    fn pairing_targets_follow_task() {
        let g = &groups(1)[0];
        let front = make_pairs(g, PairingTask::FromFront, 64).unwrap();
        assert_eq!(
            front.iter().map(|s| s.target_view).collect::<Vec<_>>(),
            vec![ViewLabel::Side, ViewLabel::Back]
        );
        let side = make_pairs(g, PairingTask::FromSide, 64).unwrap();
        assert_eq!(
            side.iter().map(|s| s.target_view).collect::<Vec<_>>(),
            vec![ViewLabel::Front, ViewLabel::Back]
        );
        for s in front.iter().chain(&side) {
            assert_ne!(s.cond_view, s.target_view);
            assert_eq!(s.group_id, g.group_id);
        }
        let pairs: BTreeSet<_> = front
            .iter()
            .chain(&side)
            .map(|s| (s.cond_view, s.target_view))
            .collect();
        assert_eq!(pairs.len(), 4);
    }

    #[test]
    fn incomplete_group_cannot_be_paired() {
        let mut g = groups(1).remove(0);
        g.views.remove(&ViewLabel::Back);
        assert!(make_pairs(&g, PairingTask::FromFront, 64).is_err());
    }

    #[test]
    fn split_counts_and_determinism() {
        let gs = groups(10);
        let (train, test) = split_dataset(&gs, 0.2, 5).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let (train2, test2) = split_dataset(&gs, 0.2, 5).unwrap();
        let ids = |v: &[ImageGroup]| v.iter().map(|g| g.group_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&train), ids(&train2));
        assert_eq!(ids(&test), ids(&test2));
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let gs = groups(3);
        assert!(split_dataset(&gs[..1], 0.5, 0).is_err());
        assert!(split_dataset(&gs, 0.0, 0).is_err());
        assert!(split_dataset(&gs, 1.0, 0).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn split_is_a_partition(n in 2usize..24, frac in 0.05f64..0.95, seed in 0u64..1000) {
            let gs: Vec<ImageGroup> = (0..n)
                .map(|i| ImageGroup {
                    group_id: group_id(i),
                    views: Default::default(),
                    metadata: Default::default(),
                })
                .collect();
            let (train, test) = split_dataset(&gs, frac, seed).unwrap();
            let a: BTreeSet<_> = train.iter().map(|g| g.group_id.clone()).collect();
            let b: BTreeSet<_> = test.iter().map(|g| g.group_id.clone()).collect();
            proptest::prop_assert!(a.is_disjoint(&b));
            proptest::prop_assert_eq!(a.len() + b.len(), n);
            proptest::prop_assert!(!a.is_empty() && !b.is_empty());
        }
    }
}
