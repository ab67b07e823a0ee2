//! Wire-format conformance: golden byte fixtures pinned against the
//! documented frame layout, plus a randomized round-trip sweep across every
//! message kind.

use rand::{Rng, SeedableRng};

use xufs::error::ErrorCode;
use xufs::wire::{
    decode_message, encode_message, EntryAttributes, EntryKind, Extent, FlushArgs, LockMode,
    LockResult, Message, MetaOp, MetaOpArgs, OpOutcome, OpStatus, Payload,
};

fn check_golden(fixture: &[u8], expect: Message) {
    let encoded = encode_message(&expect).expect("encode");
    assert_eq!(
        encoded,
        fixture,
        "encoder output diverged from the pinned frame bytes"
    );
    let decoded = decode_message(fixture).expect("decode fixture");
    assert_eq!(decoded, expect);
}

#[test]
fn golden_hello() {
    check_golden(
        include_bytes!("golden/hello.bin"),
        Message::new(1, Payload::Hello { key: "k1".into(), client_id: "c1".into() }),
    );
}

#[test]
fn golden_readdir_req() {
    check_golden(
        include_bytes!("golden/readdir_req.bin"),
        Message::new(7, Payload::ReaddirReq { path: "src".into() }),
    );
}

#[test]
fn golden_invalidate() {
    check_golden(
        include_bytes!("golden/invalidate.bin"),
        Message::new(9, Payload::Invalidate { path: "a/b".into(), new_version: 4 }),
    );
}

#[test]
fn golden_fetch_segment() {
    check_golden(
        include_bytes!("golden/fetch_segment.bin"),
        Message::new(
            3,
            Payload::FetchSegment {
                path: "f".into(),
                stream_index: 2,
                offset: 65536,
                data: vec![0xAA; 4],
            },
        ),
    );
}

#[test]
fn golden_metaop_batch() {
    check_golden(
        include_bytes!("golden/metaop_batch.bin"),
        Message::new(
            11,
            Payload::MetaOpBatch {
                client_id: "c1".into(),
                ops: vec![MetaOp {
                    op_id: 7,
                    target: "d/f".into(),
                    enqueue_time_ms: 17,
                    args: MetaOpArgs::FlushShadow(FlushArgs {
                        truncate: true,
                        set_len: Some(2),
                        base_version: 3,
                        extents: vec![Extent::new(0, b"hi".to_vec())],
                    }),
                }],
            },
        ),
    );
}

fn random_string(rng: &mut impl Rng, max: usize) -> String {
    let len = rng.random_range(0..max);
    (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
}

fn random_bytes(rng: &mut impl Rng, max: usize) -> Vec<u8> {
    let len = rng.random_range(0..max);
    (0..len).map(|_| rng.random()).collect()
}

fn random_attrs(rng: &mut impl Rng) -> EntryAttributes {
    EntryAttributes {
        name: random_string(rng, 24),
        kind: match rng.random_range(0..3) {
            0 => EntryKind::File,
            1 => EntryKind::Dir,
            _ => EntryKind::Symlink,
        },
        size: rng.random(),
        mode: rng.random_range(0..0o10000),
        mtime_ns: rng.random(),
        version: rng.random(),
    }
}

fn random_metaop(rng: &mut impl Rng) -> MetaOp {
    let args = match rng.random_range(0..7) {
        0 => MetaOpArgs::Create { mode: rng.random_range(0..0o10000) },
        1 => MetaOpArgs::Unlink,
        2 => MetaOpArgs::Mkdir { mode: rng.random_range(0..0o10000) },
        3 => MetaOpArgs::Rmdir,
        4 => MetaOpArgs::Rename { new_target: random_string(rng, 32) },
        5 => MetaOpArgs::SetAttr {
            mode: rng.random_bool(0.5).then(|| rng.random_range(0..0o10000)),
            mtime_ns: rng.random_bool(0.5).then(|| rng.random()),
            size: rng.random_bool(0.5).then(|| rng.random()),
        },
        _ => MetaOpArgs::FlushShadow(FlushArgs {
            truncate: rng.random_bool(0.3),
            set_len: rng.random_bool(0.7).then(|| rng.random()),
            base_version: rng.random(),
            extents: (0..rng.random_range(0..4))
                .map(|_| Extent::new(rng.random_range(0..1 << 40), random_bytes(rng, 64)))
                .collect(),
        }),
    };
    MetaOp {
        op_id: rng.random(),
        target: random_string(rng, 48),
        args,
        enqueue_time_ms: rng.random(),
    }
}

fn random_message(rng: &mut impl Rng) -> Message {
    let payload = match rng.random_range(0..19) {
        0 => Payload::Hello { key: random_string(rng, 16), client_id: random_string(rng, 16) },
        1 => Payload::Challenge { nonce: random_bytes(rng, 64) },
        2 => Payload::ChallengeResponse { digest: rng.random() },
        3 => Payload::AuthResult { ok: rng.random_bool(0.5), detail: random_string(rng, 32) },
        4 => Payload::ReaddirReq { path: random_string(rng, 48) },
        5 => Payload::ReaddirResp {
            entries: (0..rng.random_range(0..5)).map(|_| random_attrs(rng)).collect(),
        },
        6 => Payload::FetchReq { path: random_string(rng, 48), total_length: rng.random() },
        7 => Payload::FetchSegment {
            path: random_string(rng, 48),
            stream_index: rng.random_range(0..12),
            offset: rng.random(),
            data: random_bytes(rng, 256),
        },
        8 => Payload::FetchDone {
            path: random_string(rng, 48),
            version: rng.random(),
            total_length: rng.random(),
        },
        9 => Payload::MetaOpBatch {
            client_id: random_string(rng, 16),
            ops: (0..rng.random_range(0..4)).map(|_| random_metaop(rng)).collect(),
        },
        10 => Payload::MetaOpAck {
            results: (0..rng.random_range(0..5))
                .map(|_| OpOutcome {
                    op_id: rng.random(),
                    status: OpStatus::from_u8(rng.random_range(0..6)).unwrap(),
                    new_version: rng.random(),
                    prev_version: rng.random(),
                })
                .collect(),
        },
        11 => Payload::CallbackRegister {
            client_id: random_string(rng, 16),
            watched: (0..rng.random_range(0..4)).map(|_| random_string(rng, 24)).collect(),
        },
        12 => Payload::Invalidate { path: random_string(rng, 48), new_version: rng.random() },
        13 => Payload::LockReq {
            path: random_string(rng, 48),
            mode: if rng.random_bool(0.5) { LockMode::Shared } else { LockMode::Exclusive },
        },
        14 => Payload::LockResp {
            result: if rng.random_bool(0.5) {
                LockResult::Granted { lock_id: rng.random(), term_ms: rng.random() }
            } else {
                LockResult::Conflict
            },
        },
        15 => Payload::LeaseRenew { lock_id: rng.random() },
        16 => Payload::LeaseAck { lock_id: rng.random(), expires_in_ms: rng.random() },
        17 => Payload::Unlock { lock_id: rng.random() },
        _ => Payload::Error {
            code: ErrorCode::from_u16(rng.random_range(1..=20)).unwrap(),
            detail: random_string(rng, 64),
        },
    };
    Message::new(rng.random(), payload)
}

#[test]
fn ten_thousand_random_messages_round_trip() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x20fe11);
    for i in 0..10_000 {
        let msg = random_message(&mut rng);
        let bytes = encode_message(&msg)
            .unwrap_or_else(|e| panic!("case {i}: encode failed: {e} for {msg:?}"));
        assert_eq!(bytes.len(), msg.frame_len(), "case {i}: frame_len mismatch");
        let back = decode_message(&bytes)
            .unwrap_or_else(|e| panic!("case {i}: decode failed: {e} for {msg:?}"));
        assert_eq!(back, msg, "case {i}: round-trip diverged");
    }
}

#[test]
fn phrase_never_crosses_the_wire() {
    // Serialize one of every handshake message and scan for the phrase.
    use std::time::SystemTime;
    use xufs::wire::auth::{challenge_digest, AuthCredential};
    let phrase = b"super-secret-passphrase-material".to_vec();
    let cred = AuthCredential::long_lived("key-7", phrase.clone());
    let nonce = [9u8; 32];
    let digest = challenge_digest(&cred, &nonce, SystemTime::now()).unwrap();
    let messages = vec![
        Message::new(1, Payload::Hello { key: cred.key.clone(), client_id: "c".into() }),
        Message::new(1, Payload::Challenge { nonce: nonce.to_vec() }),
        Message::new(2, Payload::ChallengeResponse { digest }),
        Message::new(2, Payload::AuthResult { ok: true, detail: String::new() }),
    ];
    for msg in &messages {
        let bytes = encode_message(msg).unwrap();
        assert!(
            !bytes.windows(phrase.len()).any(|w| w == phrase.as_slice()),
            "phrase bytes leaked into {:?}",
            msg.kind()
        );
    }
    // The credential's debug form redacts it too.
    assert!(!format!("{cred:?}").contains("super-secret"));
}
