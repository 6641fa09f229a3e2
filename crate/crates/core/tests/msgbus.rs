use testbed_core::msgbus::*;
use testbed_core::rng;
use testbed_core::units::{ms, secs, Nanos};

fn bus_with(link: LinkModel, seed: u64) -> Bus<SimTransport> {
    let transport = SimTransport::new(LinkTable::new(link), rng::stream(seed, "net"));
    let mut bus = Bus::new(transport);
    bus.register_node(NodeInfo::new("pub", NodeKind::Central)).unwrap();
    bus.register_node(NodeInfo::new("sub", NodeKind::Dut)).unwrap();
    bus.advertise_topic("pub", "/t").unwrap();
    bus
}

/// Run the bus until `end`, feeding every event to `f`.
fn drain(bus: &mut Bus<SimTransport>, end: Nanos, mut f: impl FnMut(&mut Bus<SimTransport>, Nanos, BusEvent)) {
    while let Some(t) = bus.next_due().filter(|&t| t <= end) {
        for ev in bus.advance(t) {
            f(bus, t, ev);
        }
    }
    bus.advance(end);
}

fn publish_n(bus: &mut Bus<SimTransport>, n: u32, period: Nanos, qos: QosProfile) -> Vec<u32> {
    let mut got = Vec::new();
    for i in 0..n {
        let t = i as Nanos * period;
        drain(bus, t, |_, _, ev| {
            if let BusEvent::Message { envelope, .. } = ev {
                got.push(envelope.payload_str().parse().unwrap());
            }
        });
        bus.publish(t, "pub", "/t", i.to_string().into_bytes(), qos, t).unwrap();
    }
    drain(bus, n as Nanos * period + secs(30.0), |_, _, ev| {
        if let BusEvent::Message { envelope, .. } = ev {
            got.push(envelope.payload_str().parse().unwrap());
        }
    });
    got
}

#[test]
fn discovery_by_kind() {
    let mut bus = Bus::new(SimTransport::new(LinkTable::new(LinkModel::ideal()), rng::stream(0, "net")));
    for i in 0..4 {
        bus.register_node(NodeInfo::new(format!("dut{i}"), NodeKind::Dut)).unwrap();
    }
    bus.register_node(NodeInfo::new("agv", NodeKind::Agv)).unwrap();
    assert_eq!(bus.discover(NodeKind::Dut).len(), 4);
    assert!(matches!(
        bus.register_node(NodeInfo::new("dut1", NodeKind::Dut)),
        Err(BusError::DuplicateNode(_))
    ));
}

#[test]
fn reliable_topic_survives_heavy_loss() {
    let mut bus = bus_with(LinkModel::fixed(2.0).with_loss(0.3), 11);
    let qos = QosProfile::reliable(10_000);
    bus.subscribe(0, "sub", "/t", qos).unwrap();
    let got = publish_n(&mut bus, 10_000, ms(5.0), qos);
    assert_eq!(got, (0..10_000).collect::<Vec<_>>());
    assert!(bus.stats().retransmissions > 3000);
    assert_eq!(bus.unacked(), 0);
}

#[test]
fn best_effort_loses_about_thirty_percent() {
    let mut bus = bus_with(LinkModel::fixed(2.0).with_loss(0.3), 11);
    let qos = QosProfile::best_effort();
    bus.subscribe(0, "sub", "/t", qos).unwrap();
    let got = publish_n(&mut bus, 10_000, ms(5.0), qos);
    assert!((6800..=7200).contains(&got.len()), "{}", got.len());
    assert!(got.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(bus.stats().retransmissions, 0);
}

#[test]
fn reliable_publisher_to_best_effort_subscriber_is_best_effort() {
    let mut bus = bus_with(LinkModel::fixed(2.0).with_loss(0.3), 3);
    bus.subscribe(0, "sub", "/t", QosProfile::best_effort()).unwrap();
    let got = publish_n(&mut bus, 1000, ms(5.0), QosProfile::reliable(1000));
    assert!(got.len() < 800);
}

#[test]
fn history_overflow_drops_oldest() {
    let mut bus = bus_with(LinkModel::fixed(2.0).with_loss(0.5), 5);
    let qos = QosProfile::reliable(4);
    bus.subscribe(0, "sub", "/t", qos).unwrap();
    // Publish faster than the link can drain so the window overflows.
    let got = publish_n(&mut bus, 200, ms(0.1), qos);
    assert!(bus.stats().history_overflow_drops > 0);
    assert!(got.len() < 200);
    assert!(got.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn publish_without_subscribers_or_advertisement() {
    let mut bus = bus_with(LinkModel::ideal(), 0);
    bus.publish(0, "pub", "/t", b"x".to_vec(), QosProfile::default(), 0).unwrap();
    assert_eq!(bus.next_due(), None);
    assert!(matches!(
        bus.publish(0, "sub", "/t", b"x".to_vec(), QosProfile::default(), 0),
        Err(BusError::NotAdvertised { .. })
    ));
}

fn deadline_events(bus: &mut Bus<SimTransport>, publish_at: &[Nanos], end: Nanos) -> (Vec<Nanos>, Vec<Nanos>) {
    let (mut arrivals, mut misses) = (Vec::new(), Vec::new());
    let mut record = |_: &mut Bus<SimTransport>, _: Nanos, ev: BusEvent| match ev {
        BusEvent::Message { at, .. } => arrivals.push(at),
        BusEvent::DeadlineMissed { at, .. } => misses.push(at),
        _ => {}
    };
    for &t in publish_at {
        drain(bus, t, &mut record);
        bus.publish(t, "pub", "/t", Vec::new(), QosProfile::best_effort(), t).unwrap();
    }
    drain(bus, end, &mut record);
    (arrivals, misses)
}

/// Replays a delivery trace: from each anchor (subscription time, then each
/// arrival) a miss is due at every whole multiple of the deadline strictly
/// before the next arrival, or up to and including the end of the run.
fn deadline_oracle(start: Nanos, arrivals: &[Nanos], deadline: Nanos, end: Nanos) -> Vec<Nanos> {
    let mut out = Vec::new();
    let anchors = std::iter::once(start).chain(arrivals.iter().copied());
    let nexts = arrivals.iter().map(|&a| (a, false)).chain(std::iter::once((end, true)));
    for (anchor, (next, inclusive)) in anchors.zip(nexts) {
        let mut t = anchor + deadline;
        while t < next || (inclusive && t <= next) {
            out.push(t);
            t += deadline;
        }
    }
    out
}

#[test]
fn deadline_fires_after_silence() {
    let mut bus = bus_with(LinkModel::fixed(1.0), 0);
    bus.subscribe(0, "sub", "/t", QosProfile::best_effort().with_deadline_ms(100)).unwrap();
    let mut times: Vec<Nanos> = (0..10).map(|i| i * ms(50.0)).collect();
    times.push(ms(450.0) + ms(350.0));
    let (_, misses) = deadline_events(&mut bus, &times, secs(1.0));
    assert!(!misses.is_empty());
}

#[test]
fn no_deadline_no_events() {
    let mut bus = bus_with(LinkModel::fixed(1.0), 0);
    bus.subscribe(0, "sub", "/t", QosProfile::best_effort()).unwrap();
    let (_, misses) = deadline_events(&mut bus, &[0], secs(10.0));
    assert!(misses.is_empty());
}

#[test]
fn ten_hertz_never_misses_150ms_deadline() {
    let mut bus = bus_with(LinkModel::fixed(1.0), 0);
    bus.subscribe(0, "sub", "/t", QosProfile::best_effort().with_deadline_ms(150)).unwrap();
    let times: Vec<Nanos> = (0..600).map(|i| i * ms(100.0)).collect();
    let (arrivals, misses) = deadline_events(&mut bus, &times, ms(59_950.0));
    assert_eq!(arrivals.len(), 600);
    assert!(misses.is_empty());
}

#[test]
fn deadline_trace_matches_oracle() {
    use rand::Rng;
    let mut gaps = rng::stream(99, "gaps");
    let mut bus = bus_with(LinkModel { latency_jitter_sigma_ms: 20.0, ..LinkModel::fixed(30.0) }.with_loss(0.2), 17);
    let deadline = ms(100.0);
    bus.subscribe(0, "sub", "/t", QosProfile::best_effort().with_deadline_ms(100)).unwrap();
    let mut t = 0;
    let times: Vec<Nanos> = (0..2000)
        .map(|_| {
            t += ms(gaps.random_range(1.0..260.0));
            t
        })
        .collect();
    let end = t + secs(2.0);
    let (arrivals, misses) = deadline_events(&mut bus, &times, end);
    let expected = deadline_oracle(0, &arrivals, deadline, end);
    assert!(expected.len() > 100);
    assert_eq!(misses, expected);
    assert_eq!(bus.stats().deadline_missed, expected.len() as u64);
}

fn service_bus(link: LinkModel) -> Bus<SimTransport> {
    let mut bus = Bus::new(SimTransport::new(LinkTable::new(link), rng::stream(1, "net")));
    bus.register_node(NodeInfo::new("client", NodeKind::Central)).unwrap();
    bus.register_node(NodeInfo::new("server", NodeKind::Dut)).unwrap();
    bus.advertise_service("server", "/echo").unwrap();
    bus.advertise_action("server", "/flash").unwrap();
    bus
}

#[test]
fn echo_service_round_trip() {
    let mut bus = service_bus(LinkModel::fixed(3.0).with_loss(0.2));
    let corr = bus.call_service(0, "client", "/echo", b"x".to_vec(), secs(5.0), 0).unwrap();
    let mut responses = Vec::new();
    drain(&mut bus, secs(10.0), |bus, t, ev| match ev {
        BusEvent::ServiceRequest { server, envelope } => {
            bus.respond(t, server.as_str(), envelope.correlation_id, envelope.payload, t).unwrap();
        }
        BusEvent::ServiceResponse { correlation_id, result, .. } => responses.push((correlation_id, result)),
        _ => {}
    });
    assert_eq!(responses, vec![(corr, Ok(b"x".to_vec()))]);
    assert!(matches!(
        bus.call_service(0, "client", "/nope", Vec::new(), secs(1.0), 0),
        Err(BusError::NoSuchService(_))
    ));
}

#[test]
fn slow_handler_times_out_and_late_response_is_discarded() {
    let mut bus = service_bus(LinkModel::fixed(1.0));
    let timeout = ms(200.0);
    let corr = bus.call_service(0, "client", "/echo", b"x".to_vec(), timeout, 0).unwrap();
    let mut pending = None;
    let mut responses = Vec::new();
    drain(&mut bus, secs(2.0), |_, _, ev| match ev {
        BusEvent::ServiceRequest { envelope, .. } => pending = Some(envelope.correlation_id),
        BusEvent::ServiceResponse { correlation_id, result, .. } => responses.push((correlation_id, result)),
        _ => {}
    });
    // The handler answers after sleeping twice the timeout.
    let late = 2 * timeout;
    bus.respond(late, "server", pending.unwrap(), b"x".to_vec(), late).unwrap();
    drain(&mut bus, secs(4.0), |_, _, ev| {
        if let BusEvent::ServiceResponse { correlation_id, result, .. } = ev {
            responses.push((correlation_id, result));
        }
    });
    assert_eq!(responses, vec![(corr, Err(CallError::Timeout))]);
    assert_eq!(bus.stats().late_responses_discarded, 1);
    assert_eq!(bus.stats().service_timeouts, 1);
}

/// A four-chunk action server: feedback every 62.5 ms, result after the last.
fn run_flash(bus: &mut Bus<SimTransport>, cancel_at: Option<Nanos>, crash_at: Option<Nanos>) -> Vec<String> {
    let corr = bus.start_action(0, "client", "/flash", b"img".to_vec(), 0).unwrap();
    let mut trace = Vec::new();
    let mut progress: Option<(u64, u32, Nanos)> = None;
    let mut cancelled = false;
    let step = ms(62.5);
    let mut t = 0;
    while t < secs(3.0) {
        t += ms(0.5);
        if cancel_at.is_some_and(|c| c <= t) && !cancelled {
            cancelled = true;
            bus.cancel_action(t, "client", corr, t).unwrap();
        }
        if crash_at.is_some_and(|c| c <= t) && bus.registry().is_alive("server") {
            bus.crash_node(t, "server").unwrap();
            progress = None;
        }
        if let Some((c, done, next)) = progress {
            if next <= t {
                let done = done + 1;
                bus.action_feedback(t, "server", c, format!("{}", done * 25).into_bytes(), t).unwrap();
                if done == 4 {
                    bus.action_result(t, "server", c, &ActionOutcome::succeeded(""), t).unwrap();
                    progress = None;
                } else {
                    progress = Some((c, done, next + step));
                }
            }
        }
        drain(bus, t, |bus, now, ev| match ev {
            BusEvent::ActionGoal { envelope, .. } => {
                bus.accept_goal(now, "server", envelope.correlation_id, now).unwrap();
                progress = Some((envelope.correlation_id, 0, now + step));
            }
            BusEvent::CancelRequested { correlation_id, .. } => {
                bus.action_result(now, "server", correlation_id, &ActionOutcome::canceled(), now).unwrap();
                progress = None;
            }
            BusEvent::ActionAccepted { .. } => trace.push("accepted".into()),
            BusEvent::ActionFeedback { payload, .. } => trace.push(String::from_utf8(payload).unwrap()),
            BusEvent::ActionResult { outcome, .. } => {
                trace.push(format!("{:?}:{}", outcome.status, outcome.detail));
            }
            _ => {}
        });
    }
    trace
}

#[test]
fn action_reports_progress_then_success() {
    let mut bus = service_bus(LinkModel::fixed(2.0).with_loss(0.2));
    let trace = run_flash(&mut bus, None, None);
    assert_eq!(trace, ["accepted", "25", "50", "75", "100", "Succeeded:"]);
    assert_eq!(bus.open_goals(), 0);
}

#[test]
fn cancel_stops_feedback() {
    let mut bus = service_bus(LinkModel::fixed(2.0));
    let trace = run_flash(&mut bus, Some(ms(150.0)), None);
    assert_eq!(trace, ["accepted", "25", "50", "Canceled:"]);
}

#[test]
fn server_crash_fails_goal() {
    let mut bus = service_bus(LinkModel::fixed(2.0));
    let trace = run_flash(&mut bus, None, Some(ms(100.0)));
    assert_eq!(trace, ["accepted", "25", "Failed:connection_lost"]);
}

#[test]
fn goal_to_unknown_action_fails_immediately() {
    let mut bus = service_bus(LinkModel::ideal());
    assert!(matches!(bus.start_action(0, "client", "/nope", Vec::new(), 0), Err(BusError::NoSuchAction(_))));
    assert_eq!(bus.next_due(), None);
}
