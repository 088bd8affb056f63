//! Property tests for the codec, crypto, and wire-format laws.

use proptest::collection::vec as pvec;
use proptest::prelude::*;

use qstt_core::bits::BitString;
use qstt_core::codec::{
    decode_rho, deserialize_diffs, encode_rho, from_diffs, partition, sample_permutation,
    serialize_diffs, shuffle, to_diffs, unshuffle,
};
use qstt_core::crypto::{
    cascade_decrypt, cascade_encrypt, otp, CascadeKeys, InstructionSequence, StreamDomain,
};
use qstt_core::protocol::{wire_decode, wire_encode, SecureTimingMessage, WIRE_VERSION};
use qstt_core::rng::seeded;
use qstt_core::timebase::TimeTagArray;

proptest! {
    #[test]
    fn bitstring_push_read_roundtrip(values in pvec((0u64..u64::MAX, 1usize..=64), 0..40)) {
        let mut bits = BitString::new();
        for &(v, w) in &values {
            bits.push_uint(v & (u64::MAX >> (64 - w)), w);
        }
        let mut pos = 0;
        for &(v, w) in &values {
            prop_assert_eq!(bits.read_uint(pos, w), v & (u64::MAX >> (64 - w)));
            pos += w;
        }
    }

    #[test]
    fn otp_involution(data in pvec(any::<u8>(), 0..200), extra in 0usize..8) {
        let mut x = BitString::from_bytes(data);
        if x.len() >= extra {
            x.truncate(x.len() - extra);
        }
        let pad = BitString::random(x.len(), &mut seeded(1));
        let y = otp(&x, &pad).unwrap();
        prop_assert_eq!(otp(&y, &pad).unwrap(), x);
    }

    #[test]
    fn diff_codec_roundtrip(
        start in 0i64..1_000_000,
        gaps in pvec(1u64..1023, 0..120),
        tick in prop::sample::select(vec![1i64, 2, 500, 1000]),
    ) {
        let mut t = start * tick;
        let mut tags = vec![t];
        for &g in &gaps {
            t += g as i64 * tick;
            tags.push(t);
        }
        let arr = TimeTagArray { tags_ps: tags, duration_ps: (t / 1_000_000 + 1) * 1_000_000 };
        let d = to_diffs(&arr, tick, 10).unwrap();
        prop_assert_eq!(from_diffs(&d), arr);
    }

    #[test]
    fn partition_concatenation_law(diffs in pvec(0u64..1024, 0..200), k in 0u32..6) {
        let p = partition(&diffs, k).unwrap();
        prop_assert_eq!(p.blocks.len(), 1usize << k);
        prop_assert_eq!(p.blocks.concat(), diffs.clone());
        let sizes: Vec<usize> = p.blocks.iter().map(Vec::len).collect();
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(max - min <= 1, "block sizes differ by more than one");
    }

    #[test]
    fn shuffle_unshuffle_identity(diffs in pvec(0u64..1024, 0..200), k in 0u32..6, seed in any::<u64>()) {
        let rho = sample_permutation(k, &mut seeded(seed)).unwrap();
        let p = partition(&diffs, k).unwrap();
        let shuffled = shuffle(&p, &rho).unwrap();
        let mut sorted_in = diffs.clone();
        let mut sorted_out = shuffled.clone();
        sorted_in.sort_unstable();
        sorted_out.sort_unstable();
        prop_assert_eq!(sorted_in, sorted_out);
        prop_assert_eq!(unshuffle(&shuffled, &rho).unwrap(), diffs);
    }

    #[test]
    fn rho_encoding_roundtrip(k in 0u32..8, seed in any::<u64>()) {
        let rho = sample_permutation(k, &mut seeded(seed)).unwrap();
        let bits = encode_rho(&rho);
        prop_assert_eq!(bits.len() as u64, u64::from(k) * (1u64 << k));
        prop_assert_eq!(decode_rho(&bits, k).unwrap(), rho);
    }

    #[test]
    fn diff_serialization_roundtrip(b in 1u32..20, diffs in pvec(0u64..1_000_000, 0..100)) {
        let masked: Vec<u64> = diffs.iter().map(|d| d & ((1 << b) - 1)).collect();
        let bits = serialize_diffs(&masked, b).unwrap();
        prop_assert_eq!(bits.len(), b as usize * masked.len());
        prop_assert_eq!(deserialize_diffs(&bits, b).unwrap(), masked);
    }

    #[test]
    fn cascade_roundtrip(code in 0u8..4, len in 0usize..600, seed in any::<u64>(), session in any::<u32>()) {
        let mut rng = seeded(seed);
        let mut aes_key = [0u8; 32];
        let mut ascon_key = [0u8; 16];
        rand::Rng::fill(&mut rng, &mut aes_key[..]);
        rand::Rng::fill(&mut rng, &mut ascon_key[..]);
        let keys = CascadeKeys { aes_key, ascon_key };
        let is = InstructionSequence::from_code(code);
        let data = BitString::random(len, &mut rng);
        let ct = cascade_encrypt(&data, is, &keys, session, StreamDomain::CascadeDiffs);
        prop_assert_eq!(ct.len(), data.len());
        prop_assert_eq!(cascade_decrypt(&ct, is, &keys, session, StreamDomain::CascadeDiffs), data);
    }
}

fn arbitrary_message() -> impl Strategy<Value = SecureTimingMessage> {
    (1u32..60, 0u32..5, 2u32..14, any::<u64>(), any::<u32>(), 0u64..1 << 40).prop_flat_map(
        |(n, k, b, t1_star, session_id, duration_us)| {
            let n_diffs = n as usize - 1;
            let rho_bits = k as usize * (1usize << k);
            (
                Just((n, k, b, t1_star, session_id, duration_us)),
                pvec(any::<bool>(), n_diffs),
                pvec(any::<u8>(), (b as usize * n_diffs).div_ceil(8) + rho_bits.div_ceil(8) + 1),
                any::<u8>(),
                0u64..1 << 61,
                1u64..1 << 40,
            )
        },
    )
    .prop_map(|((n, k, b, t1_star, session_id, duration_us), q_mask, raw, pi, mac_tag, tick)| {
        let q_indices: Vec<u32> = q_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &take)| take.then_some(i as u32))
            .collect();
        let q = q_indices.len();
        let n_diffs = n as usize - 1;
        let rho_bits = k as usize * (1usize << k);
        let mut bits = BitString::from_bytes(raw);
        let mut cursor = 0;
        let mut take_bits = |len: usize| {
            let s = bits.slice(cursor, len);
            cursor += len;
            s
        };
        let rho_star = take_bits(rho_bits);
        let dt_enc = take_bits(b as usize * q);
        let dt_enc_is = take_bits(b as usize * (n_diffs - q));
        let _ = &mut bits;
        SecureTimingMessage {
            version: WIRE_VERSION,
            session_id,
            duration_us,
            n,
            k,
            b,
            codec_tick_ps: tick as i64,
            t1_star,
            rho_star,
            q_indices,
            pi,
            dt_enc,
            dt_enc_is,
            mac_tag,
        }
    })
}

proptest! {
    /// decode(encode(m)) is the identity and the encoding is canonical:
    /// re-encoding the decoded message reproduces the bytes exactly.
    #[test]
    fn wire_roundtrip_and_canonical(msg in arbitrary_message()) {
        let bytes = wire_encode(&msg).unwrap();
        let decoded = wire_decode(&bytes).unwrap();
        prop_assert_eq!(&decoded, &msg);
        prop_assert_eq!(wire_encode(&decoded).unwrap(), bytes);
    }

    /// Truncations never panic and always report a structured error.
    #[test]
    fn wire_truncation_is_detected(msg in arbitrary_message(), cut in 1usize..64) {
        let bytes = wire_encode(&msg).unwrap();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(wire_decode(&bytes[..bytes.len() - cut]).is_err());
    }
}
