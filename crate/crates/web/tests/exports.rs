use delay_audit_web::{classify_json, estimate_json, reconstruct_json};

#[test]
fn reconstruct_returns_three_columns() {
    let v: serde_json::Value = serde_json::from_str(&reconstruct_json("u3", 500).unwrap()).unwrap();
    assert_eq!(v["dim"], 3);
    assert_eq!(v["points"].as_array().unwrap().len(), 1500);
}

#[test]
fn delay_maps_are_accepted() {
    let v: serde_json::Value = serde_json::from_str(&reconstruct_json("delay:z1:4:10", 500).unwrap()).unwrap();
    assert_eq!(v["points"].as_array().unwrap().len(), 3 * (500 - 30));
    assert!(reconstruct_json("delay:z1:x:10", 500).is_err());
    assert!(reconstruct_json("nonsense", 500).is_err());
}

#[test]
fn estimate_is_seeded() {
    let a = estimate_json("u2", 2000, 20, 20, 50, 7).unwrap();
    assert_eq!(a, estimate_json("u2", 2000, 20, 20, 50, 7).unwrap());
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["queries"].as_array().unwrap().len(), 50);
}

#[test]
fn classify_lists_every_map() {
    let v: serde_json::Value = serde_json::from_str(&classify_json().unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 12);
    assert_eq!(v[2]["id"], "u3");
    assert_eq!(v[2]["class"], "degenerate_fold");
}
