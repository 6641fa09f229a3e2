use proptest::prelude::*;
use testbed_core::dut::*;
use testbed_core::units::{Nanos, NS_PER_S};

#[derive(Debug, Clone)]
enum Op {
    Erase,
    Write { addr: usize, data: Vec<u8> },
    Flash { len: usize, fill: u8, cut_after: Option<usize> },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        1 => Just(Op::Erase),
        4 => (0usize..FLASH_SIZE + 8, prop::collection::vec(any::<u8>(), 1..16)).prop_map(|(addr, data)| Op::Write { addr, data }),
        2 => (0usize..20_000, any::<u8>(), prop::option::of(0usize..4)).prop_map(|(len, fill, cut_after)| Op::Flash { len, fill, cut_after }),
    ]
}

/// Byte-array reference: erase fills 0xFF, writes AND in only when no bit
/// must be set, a completed flash lays out blob at 0 and header+manifest at
/// 0xF000 after clearing everything below the id word.
struct Model(Vec<u8>);

impl Model {
    fn write(&mut self, addr: usize, data: &[u8]) -> bool {
        if addr + data.len() > self.0.len() {
            return false;
        }
        if (0..data.len()).any(|i| self.0[addr + i] & data[i] != data[i]) {
            return false;
        }
        for (i, b) in data.iter().enumerate() {
            self.0[addr + i] &= b;
        }
        true
    }

    fn apply(&mut self, op: &Op) {
        match op {
            Op::Erase => self.0.iter_mut().for_each(|b| *b = 0xFF),
            Op::Write { addr, data } => {
                self.write(*addr, data);
            }
            Op::Flash { len, fill, cut_after } => {
                let img = FirmwareImage::new(Manifest::new(Behavior::Tag), vec![*fill; *len]);
                let chunks = len.div_ceil(4096).max(1);
                for b in &mut self.0[..0xFF00] {
                    *b = 0xFF;
                }
                let written = cut_after.filter(|&c| c < chunks).unwrap_or(chunks);
                let n = (written * 4096).min(*len);
                self.0[..n].fill(*fill);
                if written == chunks {
                    let head = img.head_bytes();
                    self.0[0xF000..0xF000 + head.len()].copy_from_slice(&head);
                }
            }
        }
    }
}

fn run_agent(agent: &mut DutAgent, t: &mut Nanos, op: &Op) {
    match op {
        Op::Erase => agent.erase().unwrap(),
        Op::Write { addr, data } => {
            let _ = agent.flash_write(*addr, data);
        }
        Op::Flash { len, fill, cut_after } => {
            let img = FirmwareImage::new(Manifest::new(Behavior::Tag), vec![*fill; *len]);
            agent.start_flash(*t, img).unwrap();
            let chunks = len.div_ceil(CHUNK_SIZE).max(1);
            let cut = cut_after.filter(|&c| c < chunks);
            let stop = *t + cut.map_or(10 * NS_PER_S, |c| c as i64 * CHUNK_TIME + 1);
            while let Some(due) = agent.next_due().filter(|&d| d <= stop) {
                agent.advance(due, due);
            }
            if cut.is_some() {
                agent.set_power(stop, 0, false);
                agent.set_power(stop, 0, true);
            }
            *t = stop + NS_PER_S;
            while let Some(due) = agent.next_due().filter(|&d| d <= *t) {
                agent.advance(due, due);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn flash_matches_reference_model(ops in prop::collection::vec(op(), 1..12)) {
        let mut agent = DutAgent::new("d");
        agent.set_power(0, 0, true);
        let mut model = Model(vec![0xFF; FLASH_SIZE]);
        let mut t = NS_PER_S;
        for op in &ops {
            run_agent(&mut agent, &mut t, op);
            model.apply(op);
            let diff = agent.flash().bytes().iter().zip(&model.0).position(|(a, b)| a != b);
            prop_assert_eq!(diff, None);
        }
    }
}

#[test]
fn firmware_file_layout() {
    let img = FirmwareImage::new(Manifest::new(Behavior::GpioEcho), vec![9; 5]);
    let bytes = img.encode();
    let manifest = br#"{"behavior":"gpio_echo","params":{}}"#;
    assert_eq!(&bytes[0..4], b"FWIM");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize, manifest.len());
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), crc32(&[9; 5]));
    assert_eq!(&bytes[16..16 + manifest.len()], manifest);
}
