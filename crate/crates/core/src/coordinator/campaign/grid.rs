use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{bring_up, firmware, CampaignError, ClockSpread, Finished};
use crate::coordinator::protocol::DutCommand;
use crate::coordinator::tickets::TicketState;
use crate::coordinator::world::{AgvSpec, DutSpec, Mount, World, WorldConfig};
use crate::dut::{Behavior, BOOT_DELAY};
use crate::env::{ActuatorNoise, Pose2D, RefSysConfig, DEFAULT_V_MAX};
use crate::locsolve::{self, LmConfig, LocalizationProblem, Point};
use crate::msgbus::LinkModel;
use crate::rng;
use crate::units::{ms, Nanos, NS_PER_S};
use crate::uwb::{parse_rng_line, ChannelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub device_id: u32,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridParams {
    /// Lower-left corner of each grid.
    pub origins: Vec<[f64; 2]>,
    pub points_per_side: u32,
    pub spacing: f64,
    /// DS-TWR exchanges per anchor at every point.
    pub n_exchanges: u32,
    pub slot_ms: f64,
    pub anchors: Vec<AnchorSpec>,
    pub tag_height: f64,
    pub channel: ChannelParams,
    pub clocks: ClockSpread,
    pub lm: LmConfig,
    pub agv_noise: ActuatorNoise,
    pub refsys: RefSysConfig,
    pub v_max: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        let corner = |device_id, x, y| AnchorSpec { device_id, position: [x, y, 2.5] };
        Self {
            origins: alloc::vec![[1.0, 1.0], [4.0, 1.0], [2.5, 2.5], [1.0, 4.0], [4.0, 4.0]],
            points_per_side: 5,
            spacing: 0.25,
            n_exchanges: 100,
            slot_ms: 5.0,
            anchors: alloc::vec![corner(1, 0.0, 0.0), corner(2, 6.0, 0.0), corner(3, 6.0, 6.0), corner(4, 0.0, 6.0)],
            tag_height: 0.3,
            channel: ChannelParams::default(),
            clocks: ClockSpread::default(),
            lm: LmConfig::default(),
            agv_noise: ActuatorNoise::default(),
            refsys: RefSysConfig::default(),
            v_max: DEFAULT_V_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub grid: u32,
    pub index: u32,
    pub target: Pose2D,
    /// Tag antenna position from simulator ground truth.
    pub truth: [f64; 3],
    pub ranges_ok: u32,
    pub ranges_dropped: u32,
    /// Rounds with fewer than three usable ranges.
    pub rounds_skipped: u32,
    pub estimates: Vec<[f64; 3]>,
    pub rmse: Option<f64>,
    pub cep95: Option<f64>,
    pub median: Option<[f64; 3]>,
    pub median_offset: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResults {
    pub points: Vec<GridPoint>,
    pub rmse_m: Option<f64>,
    pub rmse_3d_m: Option<f64>,
    pub n_estimates: u64,
    pub rounds_skipped: u64,
    /// Ranging lines that reached the central node, all bursts included.
    pub rng_lines: u64,
    /// Exchanges counted by the UWB channel.
    pub channel_exchanges: u64,
}

const TAG: &str = "tag";
const GOTO_WAIT: Nanos = 300 * NS_PER_S;
const POLL: Nanos = 100_000_000;
const SETTLE: Nanos = 10 * NS_PER_S;

fn anchor_node(id: u32) -> String {
    format!("anchor{id}")
}

fn arr(p: &Point) -> [f64; 3] {
    [p.x, p.y, p.z]
}

/// Everything the central node has heard from the tag.
#[derive(Default)]
struct TagLog {
    /// Lines after the last session-end marker.
    session: Vec<String>,
    ended: bool,
    rng_total: u64,
}

impl TagLog {
    fn pull(&mut self, world: &mut World) {
        for rec in world.take_logs().into_iter().filter(|r| r.node_id.as_str() == TAG) {
            if rec.end {
                self.session.clear();
                self.ended = true;
            } else if rec.line.starts_with("RNG,") {
                self.rng_total += 1;
                if self.ended {
                    self.session.push(rec.line);
                }
            }
        }
    }
}

pub(super) fn run(
    seed: u64,
    link: LinkModel,
    p: &GridParams,
    progress: &mut dyn FnMut(f64),
) -> Result<(Finished<GridResults>, Nanos), CampaignError> {
    if p.origins.is_empty() || p.points_per_side == 0 || p.n_exchanges == 0 {
        return Err(CampaignError::Empty);
    }
    if p.anchors.len() < 3 {
        return Err(CampaignError::Invalid("at least three anchors are needed".into()));
    }
    p.channel.validate().map_err(|e| CampaignError::Invalid(e.to_string()))?;
    let positions: BTreeMap<String, Point> =
        p.anchors.iter().map(|a| (a.device_id.to_string(), Point::from(a.position))).collect();
    if positions.len() != p.anchors.len() {
        return Err(CampaignError::Invalid("anchor device ids must be unique".into()));
    }

    let mut clock_rng = rng::stream(seed, "campaign/clocks");
    let mut duts: Vec<DutSpec> = p
        .anchors
        .iter()
        .map(|a| DutSpec { id: anchor_node(a.device_id), clock: p.clocks.draw(&mut clock_rng), mount: Mount::Fixed(a.position) })
        .collect();
    duts.push(DutSpec { id: TAG.into(), clock: p.clocks.draw(&mut clock_rng), mount: Mount::Agv { height: p.tag_height } });
    let origin = p.origins[0];
    let agv = AgvSpec { start: Pose2D::new(origin[0], origin[1], 0.0), noise: p.agv_noise, v_max: p.v_max, ..AgvSpec::default() };
    let cfg = WorldConfig {
        seed,
        link,
        duts,
        agv: Some(agv),
        refsys: p.refsys,
        channel: p.channel.clone(),
        ..WorldConfig::default()
    };
    let mut world = World::new(&cfg)?;

    let anchor_fw = firmware(Behavior::Anchor, &[]);
    for a in &p.anchors {
        bring_up(&mut world, &anchor_node(a.device_id), &anchor_fw, Some(a.device_id))?;
    }
    let tag_fw = firmware(
        Behavior::Tag,
        &[("n_exchanges", p.n_exchanges.to_string()), ("slot_ms", format!("{}", p.slot_ms))],
    );
    bring_up(&mut world, TAG, &tag_fw, None)?;

    let n_anchors = p.anchors.len() as u32;
    let expected = (n_anchors * p.n_exchanges) as usize;
    let burst_wait = BOOT_DELAY + ms(p.slot_ms) * (expected as Nanos + 1) + SETTLE;
    let side = p.points_per_side;
    let total = p.origins.len() as f64 * (side * side) as f64;
    let mut log = TagLog::default();
    let mut points = Vec::new();
    let mut failure = None;

    'grids: for (g, o) in p.origins.iter().enumerate() {
        for index in 0..side * side {
            let (i, j) = (index % side, index / side);
            let target = Pose2D::new(o[0] + i as f64 * p.spacing, o[1] + j as f64 * p.spacing, 0.0);
            let ticket = world.start_goto(target).and_then(|id| world.wait_action(id, GOTO_WAIT));
            match ticket {
                Ok(t) if t.state == TicketState::Succeeded => {}
                Ok(t) => {
                    failure = Some(format!("goto {target:?} ended {:?}: {}", t.state, t.result.unwrap_or_default()));
                    break 'grids;
                }
                Err(e) => {
                    failure = Some(format!("goto {target:?}: {e}"));
                    break 'grids;
                }
            }
            let pose = world.agv_truth()?;
            let truth = Point::new(pose.x, pose.y, p.tag_height);

            log.pull(&mut world);
            log.ended = false;
            log.session.clear();
            world.command(TAG, &DutCommand::Reset)?;
            let deadline = world.now() + burst_wait;
            while log.session.len() < expected && world.now() < deadline {
                world.run_until((world.now() + POLL).min(deadline))?;
                log.pull(&mut world);
            }

            points.push(solve_point(g as u32, index, target, truth, &log.session, n_anchors, &positions, &p.lm));
            progress(points.len() as f64 / total);
        }
    }
    world.run_for(SETTLE)?;
    log.pull(&mut world);

    let mut all_est = Vec::new();
    let mut all_truth = Vec::new();
    for pt in &points {
        all_est.extend(pt.estimates.iter().map(|e| Point::from(*e)));
        all_truth.extend(pt.estimates.iter().map(|_| Point::from(pt.truth)));
    }
    let results = GridResults {
        rmse_m: locsolve::rmse(&all_est, &all_truth).ok(),
        rmse_3d_m: locsolve::rmse_3d(&all_est, &all_truth).ok(),
        n_estimates: all_est.len() as u64,
        rounds_skipped: points.iter().map(|p| p.rounds_skipped as u64).sum(),
        rng_lines: log.rng_total,
        channel_exchanges: world.channel_usage().exchanges,
        points,
    };
    let finished = match failure {
        None => Finished::complete(results),
        Some(why) => Finished::partial(results, why),
    };
    Ok((finished, world.now()))
}

/// Group a burst into rounds (one exchange per anchor each) and solve
/// every round with at least three usable ranges.
#[allow(clippy::too_many_arguments)]
fn solve_point(
    grid: u32,
    index: u32,
    target: Pose2D,
    truth: Point,
    lines: &[String],
    n_anchors: u32,
    positions: &BTreeMap<String, Point>,
    lm: &LmConfig,
) -> GridPoint {
    let mut rounds: BTreeMap<u32, Vec<(Point, f64)>> = BTreeMap::new();
    let (mut ok, mut dropped) = (0, 0);
    for line in lines {
        let Some(r) = parse_rng_line(line) else { continue };
        let round = rounds.entry(r.exchange_index / n_anchors).or_default();
        match (r.distance, positions.get(&r.anchor_id)) {
            (Some(d), Some(a)) => {
                ok += 1;
                round.push((*a, d));
            }
            _ => dropped += 1,
        }
    }
    let mut skipped = 0;
    let mut estimates = Vec::new();
    for ranges in rounds.values() {
        let (anchors, dists): (Vec<Point>, Vec<f64>) = ranges.iter().copied().unzip();
        match LocalizationProblem::new(anchors, dists).and_then(|prob| locsolve::solve(&prob, lm)) {
            Ok(est) => estimates.push(est.p_hat),
            Err(_) => skipped += 1,
        }
    }
    let truths: Vec<Point> = estimates.iter().map(|_| truth).collect();
    let median = locsolve::componentwise_median(&estimates).ok();
    GridPoint {
        grid,
        index,
        target,
        truth: arr(&truth),
        ranges_ok: ok,
        ranges_dropped: dropped,
        rounds_skipped: skipped,
        rmse: locsolve::rmse(&estimates, &truths).ok(),
        cep95: locsolve::cep95(&estimates, &truth).ok(),
        median_offset: locsolve::median_offset(&estimates, &truth).ok(),
        median: median.as_ref().map(arr),
        estimates: estimates.iter().map(arr).collect(),
    }
}
