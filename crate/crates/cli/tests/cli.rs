//! End-to-end tests that drive the compiled `dnlb` binary the way a user
//! would: shelling out, then reading back the files it wrote.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dnlb_core::corpus::{load_queries, Corpus, Qrels};
use dnlb_core::encoder::load_checkpoint;
use dnlb_core::index::{index_quality, Index};
use tempfile::TempDir;

fn dnlb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dnlb"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawning dnlb")
}

fn run_ok(cmd: &mut Command) -> String {
    let out = run(cmd);
    assert!(
        out.status.success(),
        "dnlb failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// A generated benchmark plus a fresh-init checkpoint, in one tempdir.
struct Lab {
    #[allow(dead_code)] // owns the tempdir for the test's lifetime
    root: TempDir,
    data: PathBuf,
    checkpoint: PathBuf,
}

impl Lab {
    /// Generate `n_docs` documents with gen-data and produce an untrained
    /// checkpoint via a zero-step training run.
    fn new(n_docs: usize, n_topics: usize) -> Lab {
        let root = TempDir::new().unwrap();
        let data = root.path().join("data");
        let data_cfg = root.path().join("data.json");
        std::fs::write(
            &data_cfg,
            format!(
                r#"{{"n_docs": {n_docs}, "n_train_queries": 60, "n_dev_queries": 30,
                   "n_topics": {n_topics}, "vocab_size": 400, "terms_per_doc": 10,
                   "terms_per_query": 3, "lexical_gap_fraction": 0.0}}"#
            ),
        )
        .unwrap();
        run_ok(dnlb()
            .arg("gen-data")
            .args(["--seed", "3"])
            .arg("--config")
            .arg(&data_cfg)
            .arg("--out")
            .arg(&data));

        let exp = root.path().join("init.json");
        std::fs::write(&exp, experiment_json(&data, r#""strategy": "random", "steps": 0"#, ""))
            .unwrap();
        let init_dir = root.path().join("init");
        run_ok(dnlb()
            .arg("train")
            .arg("--config")
            .arg(&exp)
            .arg("--out")
            .arg(&init_dir));

        Lab {
            root,
            data,
            checkpoint: init_dir.join("checkpoint.dnlb"),
        }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.data.join(name)
    }
}

/// An experiment config over `data` with the given `"train"` body (comma-
/// separated JSON fields) and optional extra top-level fields.
fn experiment_json(data: &Path, train_fields: &str, extra: &str) -> String {
    format!(
        r#"{{
  "data": {{
    "collection": {0:?},
    "train_queries": {1:?},
    "dev_queries": {2:?},
    "qrels": {3:?}
  }},
  "model": {{"arch": "linear", "hash_dim": 2048, "d_emb": 16, "hidden": 0, "init_seed": 0}},
  "train": {{{train_fields}}}{extra}
}}"#,
        data.join("collection.tsv"),
        data.join("queries.train.tsv"),
        data.join("queries.dev.tsv"),
        data.join("qrels.txt"),
    )
}

#[test]
fn help_exits_zero_for_every_command() {
    for args in [
        vec!["--help"],
        vec!["gen-data", "--help"],
        vec!["build-index", "--help"],
        vec!["train", "--help"],
        vec!["eval", "--help"],
        vec!["analyze", "--help"],
    ] {
        let out = run(dnlb().args(&args));
        assert!(out.status.success(), "{args:?}");
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("Usage:"), "{args:?}");
    }
}

#[test]
fn gen_data_writes_four_files_and_reruns_byte_identically() {
    let root = TempDir::new().unwrap();
    for out in ["a", "b"] {
        run_ok(dnlb()
            .arg("gen-data")
            .args(["--seed", "11"])
            .arg("--out")
            .arg(root.path().join(out)));
    }
    for name in [
        "collection.tsv",
        "queries.train.tsv",
        "queries.dev.tsv",
        "qrels.txt",
    ] {
        let a = read(&root.path().join("a").join(name));
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, read(&root.path().join("b").join(name)), "{name}");
    }
}

#[test]
fn gen_data_without_out_is_a_usage_error() {
    let out = run(dnlb().arg("gen-data"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pq_with_required_flags_missing_is_a_usage_error() {
    let lab = Lab::new(80, 20);
    let out = run(dnlb()
        .arg("build-index")
        .arg("--checkpoint")
        .arg(&lab.checkpoint)
        .arg("--collection")
        .arg(lab.file("collection.tsv"))
        .args(["--kind", "pq"])
        .arg("--out")
        .arg(lab.data.join("x.dnix")));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pq_index_from_a_perfect_codebook_retrieves_exactly_like_exact() {
    // A collection whose 64 documents cycle through 8 distinct texts: the
    // encoder maps them onto 8 distinct embeddings, so 8 centroids per
    // subspace quantize with zero error and ranking must be preserved.
    let lab = Lab::new(80, 20);
    let texts = [
        "amber brook cedar",
        "delta ember frost",
        "grove harbor iris",
        "juniper kelp lotus",
        "maple nectar olive",
        "pearl quartz reed",
        "sable thistle umber",
        "violet willow yarrow",
    ];
    let mut collection = String::new();
    for i in 0..64 {
        collection.push_str(&format!("C{i}\t{}\n", texts[i % texts.len()]));
    }
    let col_path = lab.data.join("cycling.tsv");
    std::fs::write(&col_path, collection).unwrap();

    let exact_path = lab.data.join("exact.dnix");
    let pq_path = lab.data.join("pq.dnix");
    for (kind, path) in [("exact", &exact_path), ("pq", &pq_path)] {
        let mut cmd = dnlb();
        cmd.arg("build-index")
            .arg("--checkpoint")
            .arg(&lab.checkpoint)
            .arg("--collection")
            .arg(&col_path)
            .args(["--kind", kind])
            .arg("--out")
            .arg(path);
        if kind == "pq" {
            cmd.args(["--pq-m", "4", "--pq-k", "8"]);
        }
        run_ok(&mut cmd);
    }

    // Same dev queries against both indexes: identical ids in identical
    // order (scores may differ in the last ulp from summation grouping).
    let mut runs = Vec::new();
    for index in [&exact_path, &pq_path] {
        let out_dir = lab.data.join(format!(
            "eval-{}",
            index.file_stem().unwrap().to_string_lossy()
        ));
        run_ok(dnlb()
            .arg("eval")
            .arg("--checkpoint")
            .arg(&lab.checkpoint)
            .arg("--index")
            .arg(index)
            .arg("--collection")
            .arg(&col_path)
            .arg("--queries")
            .arg(lab.file("queries.dev.tsv"))
            .arg("--qrels")
            .arg(lab.file("qrels.txt"))
            .args(["--depth", "64"])
            .arg("--out")
            .arg(&out_dir));
        let text = String::from_utf8(read(&out_dir.join("run.trec"))).unwrap();
        let triples: Vec<(String, String, String)> = text
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split_whitespace().collect();
                (f[0].to_string(), f[2].to_string(), f[3].to_string())
            })
            .collect();
        assert!(!triples.is_empty());
        runs.push(triples);
    }
    assert_eq!(runs[0], runs[1], "exact and perfect-codebook pq disagree");
}

#[test]
fn pq_index_file_is_smaller_than_exact_at_256_centroids() {
    let lab = Lab::new(600, 75);
    let exact_path = lab.data.join("exact.dnix");
    let pq_path = lab.data.join("pq.dnix");
    run_ok(dnlb()
        .arg("build-index")
        .arg("--checkpoint")
        .arg(&lab.checkpoint)
        .arg("--collection")
        .arg(lab.file("collection.tsv"))
        .arg("--out")
        .arg(&exact_path));
    run_ok(dnlb()
        .arg("build-index")
        .arg("--checkpoint")
        .arg(&lab.checkpoint)
        .arg("--collection")
        .arg(lab.file("collection.tsv"))
        .args(["--kind", "pq", "--pq-m", "8", "--pq-k", "256"])
        .arg("--out")
        .arg(&pq_path));
    let exact_len = read(&exact_path).len();
    let pq_len = read(&pq_path).len();
    assert!(
        pq_len < exact_len,
        "pq file ({pq_len} bytes) should be smaller than exact ({exact_len} bytes)"
    );
}

#[test]
fn printed_index_quality_matches_a_library_recomputation() {
    let lab = Lab::new(300, 40);
    let index_path = lab.data.join("exact.dnix");
    let stdout = run_ok(dnlb()
        .arg("build-index")
        .arg("--checkpoint")
        .arg(&lab.checkpoint)
        .arg("--collection")
        .arg(lab.file("collection.tsv"))
        .arg("--out")
        .arg(&index_path)
        .arg("--queries")
        .arg(lab.file("queries.dev.tsv"))
        .arg("--qrels")
        .arg(lab.file("qrels.txt")));
    let printed = stdout
        .lines()
        .find_map(|l| l.strip_prefix("mrr10 "))
        .and_then(|rest| rest.split_whitespace().next())
        .expect("quality line in stdout")
        .to_string();

    let params = load_checkpoint(&lab.checkpoint).unwrap();
    let corpus = Corpus::load_tsv(lab.file("collection.tsv")).unwrap();
    let index = Index::load(&index_path).unwrap();
    let queries = load_queries(lab.file("queries.dev.tsv")).unwrap();
    let qrels = Qrels::load_trec(lab.file("qrels.txt")).unwrap();
    let quality = index_quality(&index, &params, &queries, &qrels, &corpus).unwrap();
    assert_eq!(printed, quality.mean_mrr10.to_string());
}

#[test]
fn train_rejects_a_dynamic_config_without_a_document_checkpoint() {
    let lab = Lab::new(80, 20);
    let exp = lab.data.join("adore.json");
    std::fs::write(
        &exp,
        experiment_json(&lab.data, r#""strategy": "adore", "steps": 5"#, ""),
    )
    .unwrap();
    let out = run(dnlb()
        .arg("train")
        .arg("--config")
        .arg(&exp)
        .arg("--out")
        .arg(lab.data.join("run")));
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(
        stderr.contains("adore") && stderr.contains("document"),
        "unhelpful message: {stderr}"
    );
}

#[test]
fn train_reruns_are_byte_identical_and_seeds_matter() {
    let lab = Lab::new(200, 40);
    let exp = lab.data.join("exp.json");
    std::fs::write(
        &exp,
        experiment_json(
            &lab.data,
            r#""strategy": "static_hard", "steps": 30, "seed": 5,
               "batch_size": 8, "negs_per_query": 4, "eval_every": 10"#,
            r#",
  "pool": {"k_pool": 20, "retriever": "bm25"}"#,
        ),
    )
    .unwrap();

    for out in ["r1", "r2"] {
        run_ok(dnlb()
            .arg("train")
            .arg("--config")
            .arg(&exp)
            .arg("--out")
            .arg(lab.data.join(out)));
    }
    for name in ["trainlog.csv", "checkpoint.dnlb", "pool.tsv", "pool.json"] {
        assert_eq!(
            read(&lab.data.join("r1").join(name)),
            read(&lab.data.join("r2").join(name)),
            "{name} differs between identical runs"
        );
    }

    // One tick per eval point: step 0, 10, 20, 30 → 31 rows total (one per
    // step plus the pre-training row).
    let log = String::from_utf8(read(&lab.data.join("r1").join("trainlog.csv"))).unwrap();
    assert_eq!(log.lines().count(), 1 + 31, "header + 31 records");

    // A different seed must change the trained weights.
    run_ok(dnlb()
        .arg("train")
        .arg("--config")
        .arg(&exp)
        .args(["--seed", "6"])
        .arg("--out")
        .arg(lab.data.join("r3")));
    assert_ne!(
        read(&lab.data.join("r1").join("checkpoint.dnlb")),
        read(&lab.data.join("r3").join("checkpoint.dnlb")),
        "seed override had no effect"
    );
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let lab = Lab::new(150, 30);
    let exp = lab.data.join("exp.json");
    std::fs::write(
        &exp,
        experiment_json(
            &lab.data,
            r#""strategy": "random", "steps": 20, "seed": 9, "batch_size": 8, "eval_every": 10"#,
            "",
        ),
    )
    .unwrap();
    for (out, threads) in [("t1", "1"), ("t4", "4")] {
        run_ok(dnlb()
            .arg("train")
            .args(["--threads", threads])
            .arg("--config")
            .arg(&exp)
            .arg("--out")
            .arg(lab.data.join(out)));
    }
    for name in ["trainlog.csv", "checkpoint.dnlb"] {
        assert_eq!(
            read(&lab.data.join("t1").join(name)),
            read(&lab.data.join("t4").join(name)),
            "{name} differs across thread counts"
        );
    }
}

#[test]
fn eval_preserves_metric_order_and_agrees_with_its_own_run_file() {
    let lab = Lab::new(300, 40);
    let index_path = lab.data.join("exact.dnix");
    run_ok(dnlb()
        .arg("build-index")
        .arg("--checkpoint")
        .arg(&lab.checkpoint)
        .arg("--collection")
        .arg(lab.file("collection.tsv"))
        .arg("--out")
        .arg(&index_path));
    let out_dir = lab.data.join("eval");
    run_ok(dnlb()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&lab.checkpoint)
        .arg("--index")
        .arg(&index_path)
        .arg("--collection")
        .arg(lab.file("collection.tsv"))
        .arg("--queries")
        .arg(lab.file("queries.dev.tsv"))
        .arg("--qrels")
        .arg(lab.file("qrels.txt"))
        .args(["--metrics", "r@100,mrr@10", "--depth", "100"])
        .arg("--out")
        .arg(&out_dir));

    let report: serde_json::Value =
        serde_json::from_slice(&read(&out_dir.join("report.json"))).unwrap();
    assert_eq!(
        report["metrics"],
        serde_json::json!(["r@100", "mrr@10"]),
        "metric order not preserved"
    );

    // Reparse the run file and recompute both metrics per query; the
    // report must agree.
    let qrels = Qrels::load_trec(lab.file("qrels.txt")).unwrap();
    let run_text = String::from_utf8(read(&out_dir.join("run.trec"))).unwrap();
    let mut ranked: std::collections::BTreeMap<String, Vec<String>> = Default::default();
    for line in run_text.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f.len(), 6, "TREC rows have 6 columns: {line}");
        assert_eq!(f[1], "Q0");
        assert_eq!(f[5], "dnlb");
        ranked.entry(f[0].to_string()).or_default().push(f[2].to_string());
    }

    for q in report["per_query"].as_array().unwrap() {
        let qid = q["qid"].as_str().unwrap();
        let values = q["values"].as_array().unwrap();
        let judged = qrels.judged(qid).expect("report rows are judged queries");
        let n_relevant = judged.keys().filter(|d| qrels.is_relevant(qid, d)).count();
        let run = &ranked[qid];

        let recall = run
            .iter()
            .take(100)
            .filter(|d| qrels.is_relevant(qid, d))
            .count() as f64
            / n_relevant as f64;
        assert!(
            (values[0].as_f64().unwrap() - recall).abs() < 1e-12,
            "r@100 mismatch for {qid}"
        );

        let mrr = run
            .iter()
            .take(10)
            .position(|d| qrels.is_relevant(qid, d))
            .map_or(0.0, |p| 1.0 / (p + 1) as f64);
        assert!(
            (values[1].as_f64().unwrap() - mrr).abs() < 1e-12,
            "mrr@10 mismatch for {qid}"
        );
    }
}

#[test]
fn eval_rejects_unknown_metrics_with_the_valid_names() {
    let lab = Lab::new(80, 20);
    let index_path = lab.data.join("exact.dnix");
    run_ok(dnlb()
        .arg("build-index")
        .arg("--checkpoint")
        .arg(&lab.checkpoint)
        .arg("--collection")
        .arg(lab.file("collection.tsv"))
        .arg("--out")
        .arg(&index_path));
    let out = run(dnlb()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&lab.checkpoint)
        .arg("--index")
        .arg(&index_path)
        .arg("--collection")
        .arg(lab.file("collection.tsv"))
        .arg("--queries")
        .arg(lab.file("queries.dev.tsv"))
        .arg("--qrels")
        .arg(lab.file("qrels.txt"))
        .args(["--metrics", "map"])
        .arg("--out")
        .arg(lab.data.join("e")));
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("unknown metric"), "{stderr}");
    assert!(stderr.contains("mrr@K"), "should list valid names: {stderr}");
}

#[test]
fn eval_of_an_empty_query_file_succeeds_with_an_empty_report() {
    let lab = Lab::new(80, 20);
    let index_path = lab.data.join("exact.dnix");
    run_ok(dnlb()
        .arg("build-index")
        .arg("--checkpoint")
        .arg(&lab.checkpoint)
        .arg("--collection")
        .arg(lab.file("collection.tsv"))
        .arg("--out")
        .arg(&index_path));
    let empty = lab.data.join("none.tsv");
    std::fs::write(&empty, "").unwrap();
    let out_dir = lab.data.join("eval-empty");
    run_ok(dnlb()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&lab.checkpoint)
        .arg("--index")
        .arg(&index_path)
        .arg("--collection")
        .arg(lab.file("collection.tsv"))
        .arg("--queries")
        .arg(&empty)
        .arg("--qrels")
        .arg(lab.file("qrels.txt"))
        .arg("--out")
        .arg(&out_dir));
    let report: serde_json::Value =
        serde_json::from_slice(&read(&out_dir.join("report.json"))).unwrap();
    assert_eq!(report["evaluated"], serde_json::json!(0));
    assert_eq!(report["per_query"].as_array().unwrap().len(), 0);
}

#[test]
fn analyze_errors_emits_shares_that_sum_to_one() {
    let lab = Lab::new(300, 40);
    let out_dir = lab.data.join("an");
    run_ok(dnlb()
        .arg("analyze")
        .args(["--mode", "errors"])
        .arg("--checkpoint")
        .arg(&lab.checkpoint)
        .arg("--collection")
        .arg(lab.file("collection.tsv"))
        .arg("--queries")
        .arg(lab.file("queries.train.tsv"))
        .arg("--qrels")
        .arg(lab.file("qrels.txt"))
        .arg("--out")
        .arg(&out_dir));
    let text = String::from_utf8(read(&out_dir.join("errors.csv"))).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "bucket_lo,bucket_hi,query_share,error_share"
    );
    let (mut q_sum, mut e_sum, mut rows) = (0.0, 0.0, 0);
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 4, "{line}");
        q_sum += f[2].parse::<f64>().unwrap();
        e_sum += f[3].parse::<f64>().unwrap();
        rows += 1;
    }
    assert_eq!(rows, 6, "five finite buckets plus the unbounded tail");
    assert!((q_sum - 1.0).abs() < 1e-9, "query shares sum to {q_sum}");
    assert!((e_sum - 1.0).abs() < 1e-9, "error shares sum to {e_sum}");
}

#[test]
fn analyze_curves_extract_the_log_columns() {
    let lab = Lab::new(150, 30);
    let exp = lab.data.join("exp.json");
    std::fs::write(
        &exp,
        experiment_json(
            &lab.data,
            r#""strategy": "static_hard", "steps": 20, "seed": 4,
               "batch_size": 8, "negs_per_query": 4, "eval_every": 10"#,
            r#",
  "pool": {"k_pool": 20, "retriever": "bm25"}"#,
        ),
    )
    .unwrap();
    let run_dir = lab.data.join("run");
    run_ok(dnlb()
        .arg("train")
        .arg("--config")
        .arg(&exp)
        .arg("--out")
        .arg(&run_dir));

    for (mode, file) in [("overlap", "overlap.csv"), ("phi", "phi.csv")] {
        let out_dir = lab.data.join(format!("an-{mode}"));
        run_ok(dnlb()
            .arg("analyze")
            .args(["--mode", mode])
            .arg("--log")
            .arg(run_dir.join("trainlog.csv"))
            .arg("--out")
            .arg(&out_dir));
        let text = String::from_utf8(read(&out_dir.join(file))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("step,{mode}"));
        // Ticks at steps 0, 10, 20 all carry pool diagnostics.
        let steps: Vec<&str> = lines[1..]
            .iter()
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(steps, ["0", "10", "20"], "{mode}");
        for line in &lines[1..] {
            line.split(',').nth(1).unwrap().parse::<f64>().unwrap();
        }
    }
}

#[test]
fn analyze_theorem1_on_a_small_corpus_reports_the_condition_holding() {
    // 40 documents: a relevant document can have at most 39 others above
    // it, so the top-50 clamp is never active and the condition holds for
    // any checkpoint at all.
    let lab = Lab::new(40, 10);
    let out_dir = lab.data.join("an");
    let stdout = run_ok(dnlb()
        .arg("analyze")
        .args(["--mode", "theorem1", "--topk", "50"])
        .arg("--checkpoint")
        .arg(&lab.checkpoint)
        .arg("--collection")
        .arg(lab.file("collection.tsv"))
        .arg("--queries")
        .arg(lab.file("queries.dev.tsv"))
        .arg("--qrels")
        .arg(lab.file("qrels.txt"))
        .arg("--out")
        .arg(&out_dir));
    assert!(stdout.contains("condition_holds true"), "{stdout}");
    let audit: serde_json::Value =
        serde_json::from_slice(&read(&out_dir.join("theorem1.json"))).unwrap();
    assert_eq!(audit["condition_holds"], serde_json::json!(true));
    assert_eq!(audit["objective_random"], audit["objective_topk"]);
}

#[test]
fn analyze_pq_matrix_is_square_with_kind_labels() {
    let lab = Lab::new(300, 40);
    let exp = lab.data.join("adore.json");
    std::fs::write(
        &exp,
        experiment_json(
            &lab.data,
            r#""strategy": "adore", "steps": 10, "seed": 2, "batch_size": 8,
               "dynamic_k": 20, "eval_every": 10, "eval_sample": 8"#,
            &format!(
                r#",
  "doc_checkpoint": {:?},
  "init_checkpoint": {:?}"#,
                lab.checkpoint, lab.checkpoint
            ),
        ),
    )
    .unwrap();
    let out_dir = lab.data.join("an");
    run_ok(dnlb()
        .arg("analyze")
        .args(["--mode", "pq-matrix", "--pq-k", "64"])
        .arg("--config")
        .arg(&exp)
        .arg("--out")
        .arg(&out_dir));
    let text = String::from_utf8(read(&out_dir.join("pq_matrix.csv"))).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "header + 3 rows");
    assert_eq!(lines[0], "train\\test,exact,pq_m8,pq_m4");
    for (line, label) in lines[1..].iter().zip(["exact", "pq_m8", "pq_m4"]) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 4);
        assert_eq!(f[0], label);
        for cell in &f[1..] {
            let v: f64 = cell.parse().unwrap();
            assert!((0.0..=1.0).contains(&v), "quality out of range: {v}");
        }
    }
}
