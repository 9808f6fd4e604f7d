use longmix_demo::{pack_json, rope_json, schedule_json};
use serde_json::Value;

#[test]
fn pack_reports_boundaries() {
    let v: Value = serde_json::from_str(&pack_json("30, 40, 10, 24", 64, true).unwrap()).unwrap();
    assert_eq!(v["sequences"][0]["boundaries"], serde_json::json!([0, 30, 64]));
    assert_eq!(v["pending"], 40);
    assert!(pack_json("3,x", 8, true).is_err());
    assert!(pack_json("3,0", 8, true).is_err());
}

#[test]
fn schedule_worked_example() {
    let v: Value = serde_json::from_str(&schedule_json("10; 1; 10; 1", 2, 2).unwrap()).unwrap();
    assert_eq!(v["unsorted"]["makespan"], 200.0);
    assert_eq!(v["sorted"]["makespan"], 101.0);
    assert!(schedule_json("10; 1; 10", 2, 2).is_err());
}

#[test]
fn rope_curve_doubles() {
    let v: Value = serde_json::from_str(&rope_json(5e5, 8192, 128, 65536).unwrap()).unwrap();
    let pts = v.as_array().unwrap();
    assert_eq!(pts.len(), 4);
    assert_eq!(pts[0]["base"], 5e5);
    assert!((pts[3]["base"].as_f64().unwrap() - 4.134e6).abs() < 1e3);
}
