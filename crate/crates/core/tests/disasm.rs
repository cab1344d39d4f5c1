//! Decoder robustness and the encode/decode and text round trips.

use proptest::prelude::*;
use virtscan::disasm::decode::decode_one;
use virtscan::disasm::encode::encode;
use virtscan::disasm::{decode_all, ingest_text_disasm, render_listing, FunctionBody, Listing, Mem, Mnem, NormInstr, Operand, Reg};
use virtscan::{Abi, BinaryImage, SectionKind, Va};

const AT: u64 = 0x1000;

fn reg(width: u8) -> BoxedStrategy<Reg> {
    (0u8..16).prop_map(move |num| Reg { num, width }).boxed()
}

fn mem(width: u8) -> BoxedStrategy<Mem> {
    prop_oneof![
        (reg(8), prop_oneof![Just(0i64), -0x80i64..0x80, -0x10000i64..0x10000]).prop_map(move |(b, disp)| Mem {
            base: Some(b),
            disp,
            width
        }),
        (0x2000i64..0x8000).prop_map(move |disp| Mem { base: None, disp, width }),
    ]
    .boxed()
}

fn imm() -> BoxedStrategy<i64> {
    prop_oneof![-0x80i64..0x80, -0x8000i64..0x8000, any::<i32>().prop_map(i64::from), any::<i64>()].boxed()
}

fn instr() -> impl Strategy<Value = (Mnem, Option<Operand>, Option<Operand>)> {
    let w = prop_oneof![Just(8u8), Just(4u8), Just(2u8), Just(1u8)];
    w.prop_flat_map(|w| {
        let r = reg(w).prop_map(Operand::Reg).boxed();
        let m = mem(w).prop_map(Operand::Mem).boxed();
        let i = imm().prop_map(Operand::Imm).boxed();
        let target = (0x1000i64..0x9000).prop_map(Operand::Imm);
        prop_oneof![
            (r.clone(), r.clone()).prop_map(|(d, s)| (Mnem::Mov, Some(d), Some(s))),
            (m.clone(), r.clone()).prop_map(|(d, s)| (Mnem::Mov, Some(d), Some(s))),
            (r.clone(), m.clone()).prop_map(|(d, s)| (Mnem::Mov, Some(d), Some(s))),
            (r.clone(), i.clone()).prop_map(|(d, s)| (Mnem::Mov, Some(d), Some(s))),
            (m.clone(), i.clone()).prop_map(|(d, s)| (Mnem::Mov, Some(d), Some(s))),
            (reg(8).prop_map(Operand::Reg), mem(8).prop_map(Operand::Mem)).prop_map(|(d, s)| (Mnem::Lea, Some(d), Some(s))),
            (prop_oneof![Just(Mnem::Add), Just(Mnem::Sub)], r.clone(), prop_oneof![r.clone(), i.clone(), m.clone()])
                .prop_map(|(k, d, s)| (k, Some(d), Some(s))),
            (prop_oneof![Just(Mnem::Call), Just(Mnem::Jmp), Just(Mnem::Jcc)], target).prop_map(|(k, t)| (k, None, Some(t))),
            (prop_oneof![Just(Mnem::Call), Just(Mnem::Jmp)], prop_oneof![reg(8).prop_map(Operand::Reg), mem(8).prop_map(Operand::Mem)])
                .prop_map(|(k, t)| (k, None, Some(t))),
            reg(8).prop_map(|r| (Mnem::Push, None, Some(Operand::Reg(r)))),
            reg(8).prop_map(|r| (Mnem::Pop, Some(Operand::Reg(r)), None)),
            Just((Mnem::Ret, None, None)),
            Just((Mnem::Leave, None, None)),
        ]
    })
}

fn text_image(bytes: Vec<u8>) -> BinaryImage {
    BinaryImage::builder(Abi::Itanium, 8)
        .section(".text", AT, SectionKind::Text, bytes)
        .functions([Va(AT)])
        .build()
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    /// Arbitrary bytes never panic the decoder, and whatever decodes stays
    /// inside its input.
    #[test]
    fn decoder_survives_random_bytes(bytes in prop::collection::vec(any::<u8>(), 0..32)) {
        if let Ok(d) = decode_one(&bytes, Va(AT)) {
            prop_assert!(d.len >= 1 && d.len <= bytes.len());
            prop_assert_eq!(usize::from(d.instr.raw_len), d.len);
            prop_assert_eq!(d.instr.addr, Va(AT));
        }
    }

    /// Sweeping a function of random bytes yields contiguous instructions
    /// inside the section.
    #[test]
    fn sweep_survives_random_text(bytes in prop::collection::vec(any::<u8>(), 1..256)) {
        let len = bytes.len() as u64;
        let listing = decode_all(&text_image(bytes));
        for body in listing.values() {
            let mut at = body.start;
            for i in &body.instrs {
                prop_assert_eq!(i.addr, at);
                at = i.next_addr();
            }
            prop_assert!(at.0 <= AT + len);
        }
    }

    #[test]
    fn encode_then_decode_is_identity((mnem, dst, src) in instr()) {
        let mut i = NormInstr::new(Va(AT), mnem, dst, src, 0);
        let Ok(bytes) = encode(&i) else { return Ok(()) };
        i.raw_len = bytes.len() as u8;
        let d = decode_one(&bytes, Va(AT)).unwrap_or_else(|e| panic!("{i}: {bytes:02x?}: {e:?}"));
        prop_assert_eq!(d.len, bytes.len());
        prop_assert_eq!(d.instr, i, "bytes {:02x?}", bytes);
    }

    /// Rendering a decoded listing and reading it back gives the same
    /// listing.
    #[test]
    fn text_round_trip(prog in prop::collection::vec(instr(), 1..24)) {
        let mut bytes = Vec::new();
        let mut instrs = Vec::new();
        for (mnem, dst, src) in prog {
            let mut i = NormInstr::new(Va(AT + bytes.len() as u64), mnem, dst, src, 0);
            if let Ok(b) = encode(&i) {
                i.raw_len = b.len() as u8;
                bytes.extend(b);
                instrs.push(i);
            }
        }
        prop_assume!(!instrs.is_empty());
        let img = text_image(bytes);
        let listing: Listing = [(Va(AT), FunctionBody { start: Va(AT), instrs, partial: false })].into();
        let text = render_listing(&listing);
        let back = ingest_text_disasm(&text, &img, true).unwrap_or_else(|e| panic!("{e}\n{text}"));
        prop_assert_eq!(back, listing);
    }
}

#[test]
fn generator_mostly_encodable() {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::TestRunner;
    let mut runner = TestRunner::deterministic();
    let s = instr();
    let ok = (0..400)
        .filter(|_| {
            let (m, d, src) = s.new_tree(&mut runner).unwrap().current();
            encode(&NormInstr::new(Va(AT), m, d, src, 0)).is_ok()
        })
        .count();
    eprintln!("encodable {ok}/400");
    assert!(ok >= 200);
}
