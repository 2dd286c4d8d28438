use allsmiles::grammar::{accepts_str, accepts_symbols, initial_state, sample_valid};
use allsmiles::rng::seeded;
use allsmiles::smiles::{parse, symbolize, vocabulary, SymbolId};
use rand::Rng;

const ALPHABET: &[&str] = &[
    "C", "c", "N", "n", "O", "o", "S", "s", "F", "Cl", "Br", "B", "P", "I", "(", ")", "[", "]", "1", "2", "3", "%",
    "0", "=", "#", "-", ":", "/", "\\", "H", "+", "@", "@@", "Na", "se", "$",
];

fn mutate(s: &str, rng: &mut impl Rng) -> String {
    let mut chars: Vec<String> = s.chars().map(String::from).collect();
    for _ in 0..rng.gen_range(1..=3) {
        let piece = ALPHABET[rng.gen_range(0..ALPHABET.len())].to_string();
        match rng.gen_range(0..3) {
            0 if !chars.is_empty() => {
                let i = rng.gen_range(0..chars.len());
                chars.remove(i);
            }
            1 if !chars.is_empty() => {
                let i = rng.gen_range(0..chars.len());
                chars[i] = piece;
            }
            _ => {
                let i = rng.gen_range(0..=chars.len());
                chars.insert(i, piece);
            }
        }
    }
    chars.concat()
}

#[test]
fn samples_parse_and_retokenize() {
    for seed in 0..1000 {
        let s = sample_valid(seed, 60, None);
        let ids = symbolize(&s).unwrap();
        assert!(ids.len() <= 60);
        assert!(parse(&s).is_ok(), "{s}");
        assert!(accepts_symbols(&ids), "{s}");
    }
}

#[test]
fn pda_agrees_with_parser_on_mutations() {
    let mut rng = seeded(11, 0);
    let fixed = [
        "C1CC",
        "C=1CCC-1",
        "C1CCC1",
        "C(C)(C)(C)(C)C",
        "O=O=O",
        "c1ccccc1",
        "C%10CC%10",
        "[NH4+]",
        "C(",
        "C)",
        "",
        "[C@@H](F)(Cl)Br",
        "N#N",
        "C$C",
        "C12CC12",
        "C1C1",
        "C11",
        "[CH5]C",
        "C=C=C=C",
        "FC(F)(F)F",
        "[13C:12]",
    ];
    for s in fixed {
        assert_eq!(parse(s).is_ok(), accepts_str(s), "{s:?}");
    }
    let mut agree = 0;
    let mut accepted = 0;
    for seed in 0..2000 {
        let base = sample_valid(seed, 40, None);
        let m = mutate(&base, &mut rng);
        let p = parse(&m).is_ok();
        assert_eq!(p, accepts_str(&m), "{base:?} -> {m:?}");
        agree += 1;
        accepted += p as usize;
    }
    assert_eq!(agree, 2000);
    assert!(accepted > 100, "mutations should not all be rejected ({accepted})");
}

#[test]
fn symbol_level_mutations_agree_when_tokenization_is_exact() {
    let mut rng = seeded(12, 0);
    let v = vocabulary();
    let mut checked = 0;
    for seed in 0..2000 {
        let mut ids = symbolize(&sample_valid(seed, 30, None)).unwrap();
        let pos = rng.gen_range(0..=ids.len());
        let tok = rng.gen_range(3..v.len()) as SymbolId;
        if rng.gen_bool(0.5) && pos < ids.len() {
            ids[pos] = tok;
        } else {
            ids.insert(pos, tok);
        }
        let text = v.detokenize(&ids);
        if symbolize(&text).ok().as_deref() != Some(&ids[..]) {
            continue;
        }
        checked += 1;
        assert_eq!(parse(&text).is_ok(), accepts_symbols(&ids), "{text:?}");
    }
    assert!(checked > 200, "{checked}");
}

#[test]
fn every_allowed_token_can_be_completed() {
    let v = vocabulary();
    let mut rng = seeded(13, 0);
    for seed in 0..200 {
        let ids = symbolize(&sample_valid(seed, 40, None)).unwrap();
        let cut = rng.gen_range(0..=ids.len());
        let state = initial_state().run(&ids[..cut]).unwrap();
        let mask = state.valid_next_tokens();
        assert!(mask.count() > 0, "liveness");
        for id in mask.ids() {
            let next = state.advance(id).unwrap();
            if next.is_done() {
                continue;
            }
            let mut full = ids[..cut].to_vec();
            full.push(id);
            let tail = next.completion();
            full.extend(&tail[..tail.len() - 1]);
            let text = v.detokenize(&full);
            assert!(parse(&text).is_ok(), "{text:?}");
        }
        for id in (0..v.len() as SymbolId).filter(|&id| !mask.allows(id)) {
            assert!(state.advance(id).is_err());
        }
    }
}
