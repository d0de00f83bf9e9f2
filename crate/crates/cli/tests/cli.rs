use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

fn posekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posekit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = posekit(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

/// 17 distinct keypoints for instance `i`, in image units.
fn keypoints(i: usize) -> Vec<f64> {
    (0..17)
        .flat_map(|j| {
            let x = 20.0 + ((i * 7 + j * 13) % 41) as f64 * 1.5;
            let y = 10.0 + ((i * 3 + j * 29) % 53) as f64 * 2.0;
            [x, y, 2.0]
        })
        .collect()
}

fn coco_doc(n: usize, first_image: usize) -> Value {
    let images: Vec<Value> = (0..n)
        .map(|i| json!({"id": first_image + i, "file_name": format!("img{}.png", first_image + i)}))
        .collect();
    let annotations: Vec<Value> = (0..n)
        .map(|i| {
            json!({
                "id": 1000 + first_image + i,
                "image_id": first_image + i,
                "category_id": 1,
                "keypoints": keypoints(first_image + i),
                "num_keypoints": 17,
                "bbox": [10.0, 5.0, 90.0, 120.0],
            })
        })
        .collect();
    json!({"images": images, "annotations": annotations})
}

fn write(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_vec(v).unwrap()).unwrap();
}

#[test]
fn index_build_then_query_finds_each_pose() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, idx) = (dir.path().join("train.json"), dir.path().join("poses.pkix"));
    write(&ann, &coco_doc(12, 0));
    let built = ok_json(&["index", "build", "--annotations", ann.to_str().unwrap(), "--out", idx.to_str().unwrap()]);
    assert_eq!((built["rows"].as_u64(), built["dim"].as_u64()), (Some(12), Some(300)));

    let bytes = std::fs::read(&idx).unwrap();
    assert_eq!(&bytes[..4], b"PKIX");

    let info = ok_json(&["index", "info", "--idx", idx.to_str().unwrap()]);
    assert_eq!(info["checksum"], built["checksum"]);

    // A COCO document as the query: every annotation finds itself.
    let hits = ok_json(&["index", "query", "--idx", idx.to_str().unwrap(), "--query", ann.to_str().unwrap(), "-k", "3"]);
    for (i, h) in hits.as_array().unwrap().iter().enumerate() {
        assert_eq!(h["results"][0]["id"], json!(i.to_string()));
        assert_eq!(h["results"][0]["distance"], json!(0.0));
        assert_eq!(h["results"].as_array().unwrap().len(), 3);
    }

    // A service-schema query document.
    let q = dir.path().join("q.json");
    let pts: Vec<Value> = keypoints(5).chunks(3).map(|c| json!(c)).collect();
    write(&q, &json!({"v": 1, "keypoints": pts, "bbox": [10.0, 5.0, 90.0, 120.0]}));
    let resp = ok_json(&["index", "query", "--idx", idx.to_str().unwrap(), "--query", q.to_str().unwrap(), "-k", "2"]);
    assert_eq!(resp["results"][0]["id"], json!("5"));
    assert_eq!(resp["results"].as_array().unwrap().len(), 2);

    write(&q, &json!({"v": 1, "keypoints": [[1.0, 2.0, 0.0]]}));
    let out = posekit(&["index", "query", "--idx", idx.to_str().unwrap(), "--query", q.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("keypoint_count"));
}

#[test]
fn build_reads_directories_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let anns = dir.path().join("anns");
    std::fs::create_dir(&anns).unwrap();
    write(&anns.join("b.json"), &coco_doc(3, 10));
    write(&anns.join("a.json"), &coco_doc(2, 0));
    std::fs::write(anns.join("notes.txt"), "ignored").unwrap();
    let idx = dir.path().join("i.pkix");
    let built = ok_json(&["index", "build", "--annotations", anns.to_str().unwrap(), "--out", idx.to_str().unwrap()]);
    assert_eq!(built["rows"], json!(5));

    let dup = dir.path().join("dup");
    std::fs::create_dir(&dup).unwrap();
    write(&dup.join("a.json"), &coco_doc(2, 0));
    write(&dup.join("b.json"), &coco_doc(2, 0));
    let out = posekit(&["index", "build", "--annotations", dup.to_str().unwrap(), "--out", idx.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate id"));
    let built = ok_json(&[
        "index", "build", "--annotations", anns.to_str().unwrap(), "--out", idx.to_str().unwrap(), "--id", "file-name",
    ]);
    assert_eq!(built["rows"], json!(5));
}

#[test]
fn eval_writes_versioned_report() {
    let dir = tempfile::tempdir().unwrap();
    let gt = coco_doc(6, 0);
    let mut doc = gt.clone();
    // An annotation without a bbox is rejected and reported.
    doc["annotations"].as_array_mut().unwrap().push(json!({
        "id": 77, "image_id": 0, "keypoints": keypoints(0),
    }));
    let preds: Vec<Value> = (0..5)
        .map(|i| {
            let mut k = keypoints(i);
            if i == 1 {
                k[9 * 3] += 200.0;
            }
            json!({"image_id": i, "category_id": 1, "keypoints": k, "score": 0.9})
        })
        .collect();
    let (gt_path, pred_path, report) = (
        dir.path().join("gt.json"),
        dir.path().join("pred.json"),
        dir.path().join("report.json"),
    );
    write(&gt_path, &doc);
    write(&pred_path, &json!(preds));
    let out = posekit(&[
        "eval", "--gt", gt_path.to_str().unwrap(), "--pred", pred_path.to_str().unwrap(), "--report", report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean OKS"));

    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["version"], json!(1));
    assert_eq!(r["metrics"]["instances"], json!(5));
    assert_eq!(r["metrics"]["config"]["pdj_frac"], json!(0.2));
    assert_eq!(r["metrics"]["groups"].as_array().unwrap().len(), 9);
    assert_eq!(r["sigmas"].as_array().unwrap().len(), 25);
    assert_eq!(r["skips"]["unmatched_gt"], json!([1005]));
    assert_eq!(r["skips"]["gt_rejected"][0]["rejection"]["reason"]["kind"], json!("missing_bbox"));
    // Only the displaced left wrist of one instance misses.
    assert_eq!(r["metrics"]["aggregate"]["pckh"]["rate"]["hits"], json!(84));
    assert_eq!(r["metrics"]["aggregate"]["pckh"]["rate"]["total"], json!(85));
    let wrists = r["metrics"]["groups"]
        .as_array()
        .unwrap()
        .iter()
        .find(|g| g["group"] == json!("wrists"))
        .unwrap();
    assert_eq!(wrists["pckh"]["hits"], json!(9));

    let sig = dir.path().join("sigmas.txt");
    std::fs::write(&sig, "nose 0.026\n").unwrap();
    let out = posekit(&[
        "eval", "--gt", gt_path.to_str().unwrap(), "--pred", pred_path.to_str().unwrap(), "--sigmas", sig.to_str().unwrap(),
        "--report", report.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma table"));
}

#[test]
fn heatmap_encode_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("a.json");
    write(&ann, &coco_doc(3, 0));
    let hm = dir.path().join("t.pkhm");
    let out = posekit(&[
        "heatmap", "encode", "--annotations", ann.to_str().unwrap(), "--annotation-id", "1001", "--width", "96",
        "--height", "128", "--out", hm.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(&hm).unwrap();
    assert_eq!(&bytes[..4], b"PKHM");
    let header: Vec<u32> = bytes[4..16].chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(header, [25, 96, 128]);
    assert_eq!(bytes.len(), 16 + 25 * 96 * 128 * 4);

    let decoded = ok_json(&["heatmap", "decode", "--input", hm.to_str().unwrap()]);
    let want = keypoints(1);
    for (j, p) in decoded["keypoints"].as_array().unwrap()[..17].iter().enumerate() {
        assert_eq!(p[0].as_f64().unwrap(), want[3 * j].round(), "keypoint {j}");
        assert_eq!(p[1].as_f64().unwrap(), want[3 * j + 1].round(), "keypoint {j}");
    }
}

#[test]
fn weights_from_frequency_table() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("freq.csv");
    std::fs::write(&t, "TOTAL,837000\nrare,335\ncommon,3181\nhalf,418500\n").unwrap();
    let w = ok_json(&["weights", "--frequencies", t.to_str().unwrap()]);
    let classes = w["classes"].as_array().unwrap();
    assert_eq!(classes.len(), 3);
    let rare = classes[0]["positives_per_batch"].as_f64().unwrap();
    assert!((rare - 0.2048).abs() < 1e-3);
    assert_eq!(classes[2]["r"], json!(0.5));
    assert_eq!(classes[2]["weight_positive"], json!(1.0));
}

fn get(addr: &str, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(addr).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").ok()?;
    let mut out = String::new();
    s.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn serve_answers_health() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, idx) = (dir.path().join("a.json"), dir.path().join("p.pkix"));
    write(&ann, &coco_doc(4, 0));
    ok_json(&["index", "build", "--annotations", ann.to_str().unwrap(), "--out", idx.to_str().unwrap()]);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let cfg = dir.path().join("service.toml");
    std::fs::write(&cfg, format!("index = \"p.pkix\"\nbind = \"{addr}\"\n")).unwrap();

    let mut child = Command::new(env!("CARGO_BIN_EXE_posekit"))
        .args(["serve", "--config", cfg.to_str().unwrap()])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let reply = loop {
        if let Some(r) = get(&addr, "/health") {
            break r;
        }
        assert!(Instant::now() < deadline, "service did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    let body: Value = serde_json::from_str(reply.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!((body["rows"].clone(), body["dim"].clone(), body["version"].clone()), (json!(4), json!(300), json!(1)));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "index = \"missing.pkix\"\n").unwrap();
    let out = posekit(&["serve", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.pkix"));
}
