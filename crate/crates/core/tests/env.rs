use rand::Rng;
use testbed_core::env::*;
use testbed_core::rng::stream;

fn goto(agv: &mut AgvState, target: Pose2D, refsys: &RefSys, rng: &mut testbed_core::rng::SimRng) -> GotoStatus {
    let mut ctl = Goto::new(target, GotoConfig::default());
    loop {
        let seen = refsys.sample("agv", &agv.pose.lift(0.0), 0, rng).unwrap().pose.flat();
        let (cmd, status) = ctl.tick(&seen, agv.v_max);
        if status != GotoStatus::Running {
            return status;
        }
        agv.step(cmd, 0.01, &Arena::default(), rng);
    }
}

fn alternate(noise: ActuatorNoise, refsys_cfg: RefSysConfig, n: usize) -> Vec<(f64, f64)> {
    let mut refsys = RefSys::new(refsys_cfg);
    refsys.register_body("agv");
    let mut rng = stream(42, "alt");
    let reference = Pose2D::new(3.0, 3.0, 90.0);
    let mut agv = AgvState::new(reference).with_noise(noise);
    (0..n)
        .map(|_| {
            let random = Pose2D::new(rng.random_range(2.0..4.0), rng.random_range(2.0..4.0), rng.random_range(-180.0..180.0));
            assert_eq!(goto(&mut agv, random, &refsys, &mut rng), GotoStatus::Arrived);
            assert_eq!(goto(&mut agv, reference, &refsys, &mut rng), GotoStatus::Arrived);
            (agv.pose.distance(&reference), agv.pose.yaw_error(&reference).abs())
        })
        .collect()
}

#[test]
fn hundred_alternating_runs_within_thresholds() {
    let errs = alternate(ActuatorNoise::default(), RefSysConfig::NOISELESS, 100);
    assert!(errs.iter().all(|&(d, y)| d <= 0.005 && y <= 0.3));
}

#[test]
fn there_and_back_without_noise() {
    let errs = alternate(ActuatorNoise::NONE, RefSysConfig::NOISELESS, 3);
    assert!(errs.iter().all(|&(d, y)| d <= 0.005 && y <= 0.3));
}
