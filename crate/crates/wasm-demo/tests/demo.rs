use kbqa_wasm_demo::Demo;

#[test]
fn stats_describe_toy_corpus() {
    let d = Demo::new(1, 200).unwrap();
    let s = d.stats();
    assert!(s.contains("relations=13"));
    assert!(s.lines().any(|l| l.starts_with("train=")));
}

#[test]
fn prune_lists_harry_potter() {
    let d = Demo::new(1, 200).unwrap();
    let s = d.prune("who created the character harry potter").unwrap();
    assert!(s.contains("HarryPotter\tcharacter_created_by"), "{s}");
    assert!(d.prune("   ").is_err());
}

#[test]
fn answer_requires_training() {
    let mut d = Demo::new(1, 120).unwrap();
    assert!(d.answer("who created the character harry potter").is_err());
    let report = d.train(1, 1).unwrap();
    assert!(report.starts_with("accuracy="));
    let a = d.answer("who created the character harry potter").unwrap();
    assert!(a.contains("candidates="));
}
