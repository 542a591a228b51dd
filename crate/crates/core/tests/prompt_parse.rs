use proptest::prelude::*;
use trapdex::text::{canonical_category, prompt_hash};
use trapdex::{build_adjudication_prompt, parse_answer, Answer};

const POOL: [&str; 8] = [
    "bobcat",
    "coyote",
    "raccoon",
    "opossum",
    "red fox",
    "mule deer",
    "cat",
    "skunk",
];

fn flip_case(s: &str, mask: u64) -> String {
    s.chars()
        .enumerate()
        .map(|(i, c)| {
            if mask >> (i % 64) & 1 == 1 {
                c.to_ascii_uppercase()
            } else {
                c
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn permutation_and_case_invariant(
        cats in Just(POOL.to_vec()).prop_shuffle().prop_flat_map(|v| (1..=v.len()).prop_map(move |n| v[..n].to_vec())),
        picks in prop::collection::vec(0usize..8, 0..3),
        filler in "[a-z ]{0,12}",
        mask in any::<u64>(),
        rotate in 0usize..8,
    ) {
        let mut answer = filler.clone();
        for p in &picks {
            answer.push(' ');
            answer.push_str(POOL[*p]);
            answer.push('.');
        }
        let base = parse_answer(&answer, &cats);
        let mut rotated = cats.clone();
        rotated.rotate_left(rotate % cats.len());
        prop_assert_eq!(&parse_answer(&answer, &rotated), &base);
        prop_assert_eq!(&parse_answer(&flip_case(&answer, mask), &cats), &base);
        if let Answer::Category(name) = &base {
            prop_assert!(cats.iter().any(|c| canonical_category(c) == *name));
        }
    }

    #[test]
    fn parse_never_panics(answer in any::<String>(), cats in prop::collection::vec(any::<String>(), 0..4)) {
        let _ = parse_answer(&answer, &cats);
    }

    #[test]
    fn prompt_differs_when_inputs_differ(a in "[a-z]{1,6}", b in "[a-z]{1,6}", cap1 in "[a-z ]{0,10}", cap2 in "[a-z ]{0,10}") {
        let p1 = build_adjudication_prompt(&[a.as_str()], &cap1).unwrap();
        let p2 = build_adjudication_prompt(&[b.as_str()], &cap2).unwrap();
        prop_assert_eq!(p1 == p2, a == b && cap1 == cap2);
        prop_assert_eq!(prompt_hash(&p1) == prompt_hash(&p2), p1 == p2);
    }
}

#[test]
fn three_rule_cases() {
    let cats = ["bobcat", "coyote", "raccoon"];
    assert_eq!(parse_answer("Raccoon", &cats), Answer::Category("raccoon".into()));
    assert_eq!(parse_answer("bobcat or coyote", &cats), Answer::Empty);
    assert_eq!(parse_answer("an elk", &cats), Answer::Empty);
}
