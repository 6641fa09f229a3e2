use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CampaignError, Finished};
use crate::coordinator::tickets::TicketState;
use crate::coordinator::world::{AgvSpec, World, WorldConfig, AGV_BODY};
use crate::env::{ActuatorNoise, Arena, GotoConfig, Pose2D, RefSysConfig, DEFAULT_V_MAX};
use crate::locsolve::{self, Point};
use crate::msgbus::LinkModel;
use crate::rng::{self, uniform};
use crate::units::{Nanos, NS_PER_S};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepeatabilityParams {
    pub reference_pose: Pose2D,
    pub n: u32,
    /// Width and depth of the area random poses are drawn from, centred on
    /// the reference pose.
    pub random_area: [f64; 2],
    pub v_max: f64,
    /// Controller settings, including the arrival thresholds.
    pub goto: GotoConfig,
    pub noise: ActuatorNoise,
    pub refsys: RefSysConfig,
}

impl Default for RepeatabilityParams {
    fn default() -> Self {
        Self {
            reference_pose: Pose2D::new(3.0, 3.0, 90.0),
            n: 100,
            random_area: [2.0, 2.0],
            v_max: DEFAULT_V_MAX,
            goto: GotoConfig::default(),
            noise: ActuatorNoise::default(),
            refsys: RefSysConfig::default(),
        }
    }
}

/// One return to the reference pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatSample {
    pub k: u32,
    /// Where the reference system saw the AGV on arrival.
    pub measured: Pose2D,
    /// Simulator ground truth at the same instant.
    pub truth: Pose2D,
    pub error_m: f64,
    pub yaw_error_deg: f64,
    pub truth_error_m: f64,
    pub truth_yaw_error_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilityResults {
    pub reference: Pose2D,
    pub n_requested: u32,
    pub n_completed: u32,
    /// Arrivals whose measured pose lies inside both thresholds.
    pub within_thresholds: u32,
    pub rmse_m: Option<f64>,
    pub cep95_m: Option<f64>,
    pub yaw_rmse_deg: Option<f64>,
    pub samples: Vec<RepeatSample>,
}

const GOTO_WAIT: Nanos = 300 * NS_PER_S;

pub(super) fn run(
    seed: u64,
    link: LinkModel,
    p: &RepeatabilityParams,
    progress: &mut dyn FnMut(f64),
) -> Result<(Finished<RepeatabilityResults>, Nanos), CampaignError> {
    if p.n == 0 {
        return Err(CampaignError::Empty);
    }
    let arena = Arena::default();
    let reference = p.reference_pose;
    if !arena.contains(&reference) {
        return Err(CampaignError::Invalid("reference pose outside the arena".into()));
    }
    let cfg = WorldConfig {
        seed,
        link,
        agv: Some(AgvSpec { start: reference, noise: p.noise, v_max: p.v_max, goto: p.goto, arena }),
        refsys: p.refsys,
        ..WorldConfig::default()
    };
    let mut world = World::new(&cfg)?;
    let mut rng = rng::stream(seed, "campaign/repeatability");
    let thresholds = p.goto.gains;
    let mut samples = Vec::new();
    let mut failure = None;

    'outer: for k in 1..=p.n {
        let [w, h] = p.random_area;
        let x = (reference.x + uniform(&mut rng, -w / 2.0, w / 2.0)).clamp(arena.min.0, arena.max.0);
        let y = (reference.y + uniform(&mut rng, -h / 2.0, h / 2.0)).clamp(arena.min.1, arena.max.1);
        let random = Pose2D::new(x, y, uniform(&mut rng, -180.0, 180.0));
        for target in [random, reference] {
            let id = world.start_goto(target)?;
            let t = world.wait_action(id, GOTO_WAIT)?;
            if t.state != TicketState::Succeeded {
                failure = Some(format!("goto {k} to {target:?} ended {:?}: {}", t.state, t.result.unwrap_or_default()));
                break 'outer;
            }
        }
        let measured = world.refsys_pose(AGV_BODY)?.pose.flat();
        let truth = world.agv_truth()?;
        samples.push(RepeatSample {
            k,
            measured,
            truth,
            error_m: measured.distance(&reference),
            yaw_error_deg: reference.yaw_error(&measured),
            truth_error_m: truth.distance(&reference),
            truth_yaw_error_deg: reference.yaw_error(&truth),
        });
        progress(k as f64 / p.n as f64);
    }

    let points: Vec<Point> = samples.iter().map(|s| Point::new(s.measured.x, s.measured.y, 0.0)).collect();
    let truths: Vec<Point> = points.iter().map(|_| Point::new(reference.x, reference.y, 0.0)).collect();
    let yaw: Vec<f64> = samples.iter().map(|s| s.yaw_error_deg).collect();
    let results = RepeatabilityResults {
        reference,
        n_requested: p.n,
        n_completed: samples.len() as u32,
        within_thresholds: samples
            .iter()
            .filter(|s| s.error_m <= thresholds.arrival_pos_thresh && s.yaw_error_deg.abs() <= thresholds.arrival_yaw_thresh)
            .count() as u32,
        rmse_m: locsolve::rmse(&points, &truths).ok(),
        cep95_m: truths.first().and_then(|t| locsolve::cep95(&points, t).ok()),
        yaw_rmse_deg: crate::stats::rms(&yaw),
        samples,
    };
    let now = world.now();
    Ok((
        match failure {
            None => Finished::complete(results),
            Some(why) => Finished::partial(results, why),
        },
        now,
    ))
}
