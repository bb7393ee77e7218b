use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};

fn write_lines(path: &Path, rows: &[Value]) {
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

fn read_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn qagen(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_qagen"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

type Row<'a> = (&'a str, &'a str, &'a str, Vec<&'a str>, Vec<&'a str>, &'a str);

fn question(id: &str, text: &str, answers: &[&str], split: &str) -> Value {
    json!({"id": id, "question": text, "answers": answers, "split": split})
}

/// SRL frame for `verb`, one argument per listed phrase, plus one entity
/// link per listed entity; spans located by substring search.
fn bundle(id: &str, text: &str, verb: &str, args: &[&str], entities: &[&str]) -> Value {
    let span = |p: &str| {
        let b = text.find(p).unwrap();
        let s = text[..b].chars().count();
        (s, s + p.chars().count())
    };
    let args: Vec<Value> = args
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let (s, e) = span(a);
            json!({"role": format!("ARG{i}"), "start": s, "end": e})
        })
        .collect();
    let ents: Vec<Value> = entities
        .iter()
        .map(|x| {
            let (s, e) = span(x);
            json!({"start": s, "end": e, "title": x})
        })
        .collect();
    json!({"id": id, "srl": [{"verb": verb, "args": args}], "entities": ents})
}

#[test]
fn end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let train = [
        ("t1", "who plays the doctor in sons of anarchy", "plays", vec!["who", "the doctor", "in sons of anarchy"], vec!["sons of anarchy"], "Tommy Flanagan"),
        ("t2", "who sings hey jude", "sings", vec!["who", "hey jude"], vec!["hey jude"], "The Beatles"),
        ("t3", "when did hey jude come out", "come", vec!["hey jude"], vec!["hey jude"], "1968"),
    ];
    let test = [
        ("q1", "who sang hey jude", "sang", vec!["who", "hey jude"], vec!["hey jude"], "the Beatles"),
        ("q2", "who sings sons of anarchy", "sings", vec!["who", "sons of anarchy"], vec!["sons of anarchy"], "Katey Sagal"),
        ("q3", "who wrote moby dick", "wrote", vec!["who", "moby dick"], vec!["moby dick"], "Herman Melville"),
    ];
    let rows = |set: &[Row], split: &str| -> (Vec<Value>, Vec<Value>) {
        set.iter()
            .map(|(id, text, verb, args, ents, ans)| (question(id, text, &[ans], split), bundle(id, text, verb, args, ents)))
            .unzip()
    };
    let (tq, ta) = rows(&train, "train");
    let (sq, sa) = rows(&test, "test");
    write_lines(&d.join("train.jsonl"), &tq);
    write_lines(&d.join("train_ann.jsonl"), &ta);
    write_lines(&d.join("test.jsonl"), &sq);
    write_lines(&d.join("test_ann.jsonl"), &sa);

    qagen(d, &["decompose", "--questions", "train.jsonl", "--annotations", "train_ann.jsonl", "--out", "train_atoms.jsonl"]);
    qagen(d, &["decompose", "--questions", "test.jsonl", "--annotations", "test_ann.jsonl", "--out", "test_atoms.jsonl"]);
    let atoms = read_lines(&d.join("test_atoms.jsonl"));
    assert_eq!(atoms[0]["qw"], "who");
    assert_eq!(atoms[0]["entities"][0]["surface"], "hey jude");

    qagen(
        d,
        &[
            "categorize", "--train", "train.jsonl", "--train-atoms", "train_atoms.jsonl", "--test", "test.jsonl", "--test-atoms",
            "test_atoms.jsonl", "--pairs-k", "2", "--out", "assignments.jsonl",
        ],
    );
    let assignments = read_lines(&d.join("assignments.jsonl"));
    let cats: Vec<&str> = assignments.iter().map(|a| a["category"].as_str().unwrap()).collect();
    assert_eq!(cats, ["overlap", "comp_gen", "novel_entity"]);
    assert_eq!(assignments[0]["paired_train"][0]["id"], "t2");

    write_lines(
        &d.join("labels.jsonl"),
        &[
            json!({"task_id": "q1::overlap", "annotator": "a", "label": true, "ts": "1"}),
            json!({"task_id": "q2::comp_gen", "annotator": "a", "label": true, "ts": "1"}),
            json!({"task_id": "q3::novel_entity", "annotator": "a", "label": false, "ts": "1"}),
            json!({"task_id": "q3::novel_entity", "annotator": "a", "label": true, "ts": "2"}),
        ],
    );
    qagen(d, &["finalize", "--assignments", "assignments.jsonl", "--labels", "labels.jsonl", "--out", "subsets.json"]);
    let subsets: Value = serde_json::from_str(&std::fs::read_to_string(d.join("subsets.json")).unwrap()).unwrap();
    assert_eq!(subsets["overlap"], json!(["q1"]));
    assert_eq!(subsets["comp_gen"], json!(["q2"]));
    assert_eq!(subsets["novel_entity"], json!(["q3"]));
    assert_eq!(subsets["coverage"], 1.0);

    qagen(
        d,
        &[
            "patterns", "--train", "train.jsonl", "--train-atoms", "train_atoms.jsonl", "--test", "test.jsonl", "--test-atoms",
            "test_atoms.jsonl", "--subsets", "subsets.json", "--out", "patterns.json",
        ],
    );
    let patterns: Value = serde_json::from_str(&std::fs::read_to_string(d.join("patterns.json")).unwrap()).unwrap();
    // "who sings [entity]" also occurs in train, as t2
    assert_eq!(patterns["test_patterns"]["q2"], "who sing [entity]");
    assert_eq!(patterns["subsets"]["comp_gen"][1]["ids"], json!(["q2"]));

    write_lines(
        &d.join("preds.jsonl"),
        &[
            json!({"id": "q1", "prediction": "The Beatles", "model": "m"}),
            json!({"id": "q2", "prediction": "Charlie Hunnam", "model": "m"}),
            json!({"id": "q3", "prediction": "Herman Melville", "model": "m"}),
        ],
    );
    let passages = |texts: &[&str]| -> Value {
        texts.iter().enumerate().map(|(i, t)| json!({"title": format!("p{i}"), "text": t, "rank": i + 1})).collect()
    };
    write_lines(
        &d.join("retrievals.jsonl"),
        &[
            json!({"id": "q1", "passages": passages(&["hey jude by the beatles", "filler"])}),
            json!({"id": "q2", "passages": passages(&["Charlie Hunnam stars. Charlie Hunnam again.", "Katey Sagal sings"])}),
            json!({"id": "q3", "passages": passages(&["moby dick is long", "written by herman melville"])}),
        ],
    );
    for out in ["report.json", "report.csv"] {
        qagen(
            d,
            &[
                "evaluate", "--questions", "test.jsonl", "--predictions", "preds.jsonl", "--subsets", "subsets.json", "--retrievals",
                "retrievals.jsonl", "--ks", "1,2", "--train", "train.jsonl", "--train-atoms", "train_atoms.jsonl", "--test-atoms",
                "test_atoms.jsonl", "--out", out,
            ],
        );
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    let total = report["models"]["m"]["em"]["total"]["value"].as_f64().unwrap();
    assert!((total - 200.0 / 3.0).abs() < 1e-9);
    assert_eq!(report["retrieval"]["accuracy"]["total"]["2"], 100.0);
    assert!(std::fs::read_to_string(d.join("report.csv")).unwrap().starts_with("section,model,subset,kind,key,n,value"));

    qagen(d, &["ablate", "mask", "--questions", "test.jsonl", "--retrievals", "retrievals.jsonl", "--predictions", "preds.jsonl", "--out", "masked.jsonl"]);
    let masked = read_lines(&d.join("masked.jsonl"));
    assert_eq!(masked.len(), 1);
    assert_eq!(masked[0]["id"], "q2");
    assert_eq!(masked[0]["provenance"]["masked"], 1);

    qagen(
        d,
        &[
            "ablate", "swap", "--questions", "test.jsonl", "--retrievals", "retrievals.jsonl", "--subsets", "subsets.json", "--train",
            "train.jsonl", "--train-atoms", "train_atoms.jsonl", "--test-atoms", "test_atoms.jsonl", "--seed", "4", "--out", "swap.jsonl",
        ],
    );
    let swapped = read_lines(&d.join("swap.jsonl"));
    assert_eq!(swapped.len(), 1);
    let q = swapped[0]["question"].as_str().unwrap();
    assert!(!q.contains("moby dick"), "{q}");
    assert_eq!(swapped[0]["provenance"]["transform"], "entity_swap");

    write_lines(&d.join("pool.jsonl"), &(0..10).map(|i| json!({"title": format!("r{i}"), "text": format!("random {i}")})).collect::<Vec<_>>());
    let args = [
        "ablate", "randomize", "--questions", "test.jsonl", "--retrievals", "retrievals.jsonl", "--corpus", "pool.jsonl", "--fraction",
        "1.0", "--keep-gold", "--seed", "9", "--out",
    ];
    let mut a = args.to_vec();
    a.push("rand1.jsonl");
    qagen(d, &a);
    let mut b = args.to_vec();
    b.push("rand2.jsonl");
    qagen(d, &b);
    let r1 = std::fs::read(d.join("rand1.jsonl")).unwrap();
    assert_eq!(r1, std::fs::read(d.join("rand2.jsonl")).unwrap());
    assert_eq!(read_lines(&d.join("rand1.jsonl")).len(), 3);
}

#[test]
fn rejects_bad_k() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_lines(&d.join("q.jsonl"), &[question("a", "x", &["y"], "test")]);
    write_lines(&d.join("p.jsonl"), &[]);
    std::fs::write(d.join("s.json"), r#"{"overlap":[],"comp_gen":[],"novel_entity":[],"uncategorized":[],"coverage":0}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_qagen"))
        .current_dir(d)
        .args(["evaluate", "--questions", "q.jsonl", "--predictions", "p.jsonl", "--subsets", "s.json", "--ks", "0", "--out", "r.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("k = 0"));
}
