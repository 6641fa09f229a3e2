use std::time::{Duration, Instant};

use testbed::tcp::TcpTransport;
use testbed_core::msgbus::{Bus, BusEvent, NodeInfo, NodeKind, QosProfile};
use testbed_core::units::Nanos;

/// Both processes hold the same node graph; the transport decides which
/// nodes are local.
fn graph(t: TcpTransport) -> Bus<TcpTransport> {
    let mut b = Bus::new(t);
    b.register_node(NodeInfo::new("central", NodeKind::Central)).unwrap();
    b.register_node(NodeInfo::new("dut1", NodeKind::Dut)).unwrap();
    b.advertise_topic("dut1", "/dut1/log").unwrap();
    b.advertise_service("dut1", "/dut1/cmd").unwrap();
    b
}

fn pump(b: &mut Bus<TcpTransport>, t0: Instant, done: impl Fn(&[BusEvent]) -> bool) -> Vec<BusEvent> {
    let mut events = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(10);
    while !done(&events) && Instant::now() < deadline {
        events.extend(b.advance(t0.elapsed().as_nanos() as Nanos));
        std::thread::sleep(Duration::from_millis(1));
    }
    events
}

#[test]
fn topics_and_services_cross_a_real_socket() {
    let mut ct = TcpTransport::new();
    let mut dt = TcpTransport::new();
    let caddr = ct.host("central", "127.0.0.1:0").unwrap();
    let daddr = dt.host("dut1", "127.0.0.1:0").unwrap();
    assert_eq!(dt.hosted_addr("dut1"), Some(daddr));
    ct.peer("dut1", daddr);
    dt.peer("central", caddr);
    let (mut central, mut dut) = (graph(ct), graph(dt));

    let t0 = Instant::now();
    let now = || t0.elapsed().as_nanos() as Nanos;
    let qos = QosProfile::default();
    let sub = central.subscribe(0, "central", "/dut1/log", qos).unwrap();
    central.transport_mut().route_topic("central", "/dut1/log", sub);
    // The publishing process needs its own record of the subscriber.
    dut.subscribe(0, "central", "/dut1/log", qos).unwrap();

    for i in 0..50 {
        dut.publish(now(), "dut1", "/dut1/log", format!("line {i}").into_bytes(), qos, 0).unwrap();
    }
    let events = pump(&mut central, t0, |ev| ev.len() >= 50);
    let lines: Vec<&str> = events
        .iter()
        .filter_map(|e| match e {
            BusEvent::Message { subscription, envelope, .. } if *subscription == sub => Some(envelope.payload_str()),
            _ => None,
        })
        .collect();
    let expected: Vec<String> = (0..50).map(|i| format!("line {i}")).collect();
    assert_eq!(lines, expected);

    let corr = central.call_service(now(), "central", "/dut1/cmd", b"ping".to_vec(), 5_000_000_000, now()).unwrap();
    let is_req = |e: &BusEvent| matches!(e, BusEvent::ServiceRequest { .. });
    let req = pump(&mut dut, t0, |ev| ev.iter().any(is_req)).into_iter().find(is_req);
    let Some(BusEvent::ServiceRequest { server, envelope }) = req else { panic!("no request arrived") };
    assert_eq!((server.as_str(), envelope.payload_str()), ("dut1", "ping"));
    dut.respond(now(), "dut1", envelope.correlation_id, b"pong".to_vec(), now()).unwrap();

    let is_resp = |e: &BusEvent| matches!(e, BusEvent::ServiceResponse { .. });
    let resp = pump(&mut central, t0, |ev| ev.iter().any(is_resp));
    let got = resp.into_iter().find_map(|e| match e {
        BusEvent::ServiceResponse { correlation_id, result, .. } if correlation_id == corr => Some(result),
        _ => None,
    });
    assert_eq!(got, Some(Ok(b"pong".to_vec())));
    assert_eq!(central.transport().stats().unroutable, 0);
    assert_eq!(dut.transport().stats().sent, 51);
    assert_eq!(central.transport().stats().received, 51);
}

#[test]
fn unreachable_peers_count_as_send_failures() {
    let mut t = TcpTransport::new();
    // Bind then drop to get a port nobody listens on.
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    t.peer("dut1", dead);
    let mut b = graph(t);
    b.call_service(0, "central", "/dut1/cmd", b"x".to_vec(), 1_000_000_000, 0).unwrap();
    assert_eq!(b.transport().stats().send_failures, 1);
}
