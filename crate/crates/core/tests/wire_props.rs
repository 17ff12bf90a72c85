mod common;

use std::path::PathBuf;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};

use rtsabac_core::dissect::Dissector;
use rtsabac_core::wire::{
    open, seal, Authenticator, Ed25519Authenticator, Envelope, HmacAuthenticator, Message, MessageType,
    NoopAuthenticator, OpenError, ReplayGuard,
};
use rtsabac_core::Timestamp;

use common::random_frame;
use common::wire::{authenticators, envelope, golden, golden_path, hmac_oracle, KEY, SECRET};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1200))]

    #[test]
    fn envelopes_round_trip(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let auths = authenticators();
        let auth = auths.choose(&mut rng).unwrap();
        let env = seal(envelope(&mut rng), auth.as_ref()).unwrap();
        let bytes = env.encode().unwrap();
        let back = Envelope::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &env);
        prop_assert_eq!(back.encode().unwrap(), bytes);
        let mut guard = ReplayGuard::new();
        prop_assert_eq!(open(&back, auth.as_ref(), &mut guard, env.timestamp, 0), Ok(()));
    }

    #[test]
    fn decode_never_panics(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut bytes = seal(envelope(&mut rng), &NoopAuthenticator).unwrap().encode().unwrap();
        match rng.gen_range(0..3) {
            0 => bytes.truncate(rng.gen_range(0..bytes.len())),
            1 => {
                let i = rng.gen_range(0..bytes.len());
                bytes[i] = rng.gen();
            }
            _ => {
                bytes = vec![0; rng.gen_range(0..64)];
                rng.fill_bytes(&mut bytes);
            }
        }
        let _ = Envelope::decode(&bytes);
    }
}

#[test]
fn hmac_matches_rfc4231_case_2() {
    let expected = "164b7a7bfcf819e2e395fbe73b56e0a387bd64222e831fd610270cd7ea2505549758bf75c05a994a6d034f65f8f0e6fdcaeab1a34d4a6b4b636e070a38bce737";
    let msg = b"what do ya want for nothing?";
    assert_eq!(hex::encode(hmac_oracle(b"Jefe", msg)), expected);
    assert_eq!(hex::encode(HmacAuthenticator::new(b"Jefe").sign(msg).unwrap()), expected);
    let mut rng = StdRng::seed_from_u64(1);
    for _ in 0..200 {
        let mut key = vec![0; rng.gen_range(0..200)];
        let mut msg = vec![0; rng.gen_range(0..300)];
        rng.fill_bytes(&mut key);
        rng.fill_bytes(&mut msg);
        assert_eq!(HmacAuthenticator::new(&key).sign(&msg).unwrap(), hmac_oracle(&key, &msg));
    }
}

#[test]
fn ed25519_matches_rfc8032_test_1() {
    let secret: [u8; 32] = hex::decode("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60").unwrap().try_into().unwrap();
    let public = "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a";
    let signature = "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b";
    let signer = Ed25519Authenticator::from_secret(&secret);
    assert_eq!(hex::encode(signer.public_key()), public);
    assert_eq!(hex::encode(signer.sign(b"").unwrap()), signature);
    let verifier = Ed25519Authenticator::verifier(&signer.public_key()).unwrap();
    assert!(verifier.verify(b"", &hex::decode(signature).unwrap()));
    assert!(verifier.sign(b"").is_err());
}

#[test]
fn single_bit_corruption_is_rejected() {
    let mut rng = StdRng::seed_from_u64(99);
    for auth in authenticators().iter().skip(1) {
        let env = seal(envelope(&mut rng), auth.as_ref()).unwrap();
        let bytes = env.encode().unwrap();
        for _ in 0..100 {
            let mut bad = bytes.clone();
            let bit = rng.gen_range(0..bad.len() * 8);
            bad[bit / 8] ^= 0x80 >> (bit % 8);
            let accepted = Envelope::decode(&bad)
                .map(|e| open(&e, auth.as_ref(), &mut ReplayGuard::new(), e.timestamp, 0).is_ok())
                .unwrap_or(false);
            assert!(!accepted, "{} accepted flipped bit {bit}", auth.scheme().name());
        }
    }
}

#[test]
fn replay_and_staleness_are_rejected() {
    let auth = HmacAuthenticator::new(KEY);
    let mut guard = ReplayGuard::new();
    let env = |seq: u64, ts: u64| seal(Envelope::new("pdp", seq, Timestamp(ts), Message::PolicyExchangeRequest), &auth).unwrap();
    assert_eq!(open(&env(10, 1000), &auth, &mut guard, Timestamp(1000), 2000), Ok(()));
    assert!(matches!(open(&env(10, 1000), &auth, &mut guard, Timestamp(1000), 2000), Err(OpenError::Replay { .. })));
    assert!(matches!(open(&env(9, 1000), &auth, &mut guard, Timestamp(1000), 2000), Err(OpenError::Replay { .. })));
    assert!(matches!(open(&env(11, 1000), &auth, &mut guard, Timestamp(3001), 2000), Err(OpenError::Stale { .. })));
    assert_eq!(open(&env(11, 1000), &auth, &mut guard, Timestamp(3000), 2000), Ok(()));
    let other = Ed25519Authenticator::from_secret(&SECRET);
    assert!(matches!(open(&env(12, 1000), &other, &mut guard, Timestamp(1000), 2000), Err(OpenError::SchemeMismatch { .. })));
    let forged = seal(Envelope::new("pdp", 13, Timestamp(1000), Message::PolicyExchangeRequest), &HmacAuthenticator::new(b"x")).unwrap();
    assert_eq!(open(&forged, &auth, &mut guard, Timestamp(1000), 2000), Err(OpenError::AuthFailure));
    assert_eq!(open(&env(12, 1000), &auth, &mut guard, Timestamp(1000), 2000), Ok(()));
}

#[test]
fn golden_envelopes() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let auth = HmacAuthenticator::new(KEY);
    for ty in MessageType::ALL {
        let env = golden(ty);
        let bytes = env.encode().unwrap();
        assert_eq!(bytes[1], ty.code());
        let path = golden_path(&dir, ty);
        if update {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&path, hex::encode(&bytes) + "\n").unwrap();
            continue;
        }
        let stored = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        let stored = hex::decode(stored.trim()).unwrap();
        assert_eq!(stored, bytes, "{} drifted", ty.name());
        let back = Envelope::decode(&stored).unwrap();
        assert_eq!(back, env);
        assert_eq!(open(&back, &auth, &mut ReplayGuard::new(), back.timestamp, 0), Ok(()));
    }
}

#[test]
fn payload_frames_survive_transport() {
    let mut rng = StdRng::seed_from_u64(5);
    for _ in 0..200 {
        let frame = random_frame(&mut rng).build();
        let env = Envelope::new("dep", 1, Timestamp(0), Message::PayloadExchangeRequest { frame: frame.clone() });
        let Message::PayloadExchangeRequest { frame: got } = Envelope::decode(&env.encode().unwrap()).unwrap().message else {
            panic!("wrong variant")
        };
        assert_eq!(Dissector::default().dissect(&got).unwrap(), Dissector::default().dissect(&frame).unwrap());
    }
}
