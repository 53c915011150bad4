use crsim_core::protocol::{parse_turn, parse_turn_bytes, serialize_turn, ActionKind, Role, Turn};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn legal_pair() -> impl Strategy<Value = (Role, ActionKind)> {
    let pairs: Vec<(Role, ActionKind)> = Role::ALL
        .iter()
        .flat_map(|&r| {
            ActionKind::ALL
                .iter()
                .filter(move |a| a.is_legal_for(r))
                .map(move |&a| (r, a))
        })
        .collect();
    proptest::sample::select(pairs)
}

fn text() -> impl Strategy<Value = String> {
    "[^<>]{0,40}"
}

fn title() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 :'&é]{0,20}[A-Za-z0-9]( \\([12][0-9]{3}\\))?"
}

fn turn() -> impl Strategy<Value = Turn> {
    (legal_pair(), text(), proptest::option::of(title()), text()).prop_map(|((role, action), before, title, after)| {
        match (action, title) {
            (ActionKind::Recommend, None) => Turn::titled(role, action, &before, "Heat (1995)", &after),
            (_, Some(t)) => Turn::titled(role, action, &before, &t, &after),
            (_, None) => Turn::plain(role, action, format!("{before}{after}")),
        }
        .expect("generated turns are valid")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn parse_inverts_serialize(t in turn()) {
        let wire = serialize_turn(&t).unwrap();
        prop_assert_eq!(parse_turn(&wire, t.role).unwrap(), t);
    }

    #[test]
    fn serialize_is_canonical_after_parse(t in turn(), pad in "[ \t\n]{0,3}") {
        let wire = serialize_turn(&t).unwrap();
        let padded = format!("{pad}{}", wire.replace("</action><response>", &format!("</action>{pad}<response>")));
        let reparsed = parse_turn(&padded, t.role).unwrap();
        prop_assert_eq!(serialize_turn(&reparsed).unwrap(), wire);
    }
}

const FRAGMENTS: [&str; 12] = [
    "<action>",
    "</action>",
    "<response>",
    "</response>",
    "<movie_title>",
    "</movie_title>",
    "<recommend>",
    "<accept>",
    "<purchase>",
    "Heat (1995)",
    "<",
    ">",
];

const SEEDS: [&str; 3] = [
    "<action><recommend></action><response>Try <movie_title>Heat (1995)</movie_title>!</response>",
    "<action><feedback></action><response>Not for me.</response>",
    "<action><accept></action><response>Perfect",
];

#[test]
fn random_bytes_never_panic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF422);
    let mut ok = 0usize;
    for i in 0..100_000 {
        let bytes: Vec<u8> = if i % 2 == 0 {
            let len = rng.gen_range(0..64);
            (0..len).map(|_| rng.gen()).collect()
        } else if i % 4 == 1 {
            // Tag fragments interleaved with random bytes.
            let mut v = Vec::new();
            for _ in 0..rng.gen_range(0..8) {
                if rng.gen_bool(0.7) {
                    v.extend_from_slice(FRAGMENTS[rng.gen_range(0..FRAGMENTS.len())].as_bytes());
                } else {
                    v.push(rng.gen());
                }
            }
            v
        } else {
            // A valid turn with a few byte-level mutations.
            let mut v = SEEDS[rng.gen_range(0..SEEDS.len())].as_bytes().to_vec();
            for _ in 0..rng.gen_range(0..4) {
                let at = rng.gen_range(0..=v.len());
                match rng.gen_range(0..3) {
                    0 if at < v.len() => {
                        v.remove(at);
                    }
                    1 if at < v.len() => v[at] = rng.gen(),
                    _ => v.insert(at, rng.gen()),
                }
            }
            v
        };
        let role = if rng.gen() { Role::User } else { Role::Recommender };
        match parse_turn_bytes(&bytes, role) {
            Ok(t) => {
                ok += 1;
                // Whatever parses must serialize and parse back to the same content.
                let wire = serialize_turn(&t).unwrap();
                let again = parse_turn(&wire, role).unwrap();
                assert_eq!(
                    (again.action, &again.response_text, &again.title),
                    (t.action, &t.response_text, &t.title)
                );
            }
            Err(e) => {
                if let Some(off) = e.offset() {
                    assert!(off <= bytes.len(), "offset {off} beyond input of {} bytes", bytes.len());
                }
            }
        }
    }
    assert!(ok > 0, "structured fuzzing should produce some valid turns");
}
