mod common;

use common::{check_reward_case, reward_cases};

#[test]
fn fixture_table_is_large_enough() {
    assert!(reward_cases().len() >= 20);
}

#[test]
fn every_fixture_scores_exactly() {
    let failures: Vec<String> = reward_cases()
        .iter()
        .filter_map(|c| check_reward_case(c).err())
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn all_present_totals_four() {
    let cases = reward_cases();
    let c = cases.iter().find(|c| c.name == "all present").unwrap();
    assert_eq!(check_reward_case(c).unwrap().total, 4.0);
}

#[test]
fn three_keywords_give_one_third() {
    let cases = reward_cases();
    let c = cases
        .iter()
        .find(|c| c.name == "three of nine keywords")
        .unwrap();
    assert_eq!(check_reward_case(c).unwrap().r_cog, 1.0 / 3.0);
}
