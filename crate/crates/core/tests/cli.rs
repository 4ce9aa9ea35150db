use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn p2l(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_p2l"))
        .args(args)
        .env_remove("P2L_REGISTRY")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_embeddings(dir: &Path, name: &str, extractor: &str, rows: &[Vec<f64>]) -> PathBuf {
    let path = dir.join(format!("{name}.csv"));
    let mut text = format!("# p2l-embeddings v1 dim={} extractor={extractor}\n", rows[0].len());
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    fs::write(&path, text).unwrap();
    path
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn registry(&self) -> String {
        self.dir.path().join("reg").to_string_lossy().into_owned()
    }

    fn add(&self, name: &str, role: &str, size: u64, row: [f64; 3]) {
        let rows = vec![row.to_vec(), row.iter().map(|v| v * 1.1).collect()];
        let file = write_embeddings(self.dir.path(), name, "ext", &rows);
        let out = p2l(&[
            "profile",
            "--input",
            file.to_str().unwrap(),
            "--name",
            name,
            "--size",
            &size.to_string(),
            "--role",
            role,
            "--registry",
            &self.registry(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }

    fn file(&self, name: &str, text: &str) -> String {
        let p = self.dir.path().join(name);
        fs::write(&p, text).unwrap();
        p.to_string_lossy().into_owned()
    }
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .take_while(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn profile_writes_and_reports() {
    let f = Fixture::new();
    let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, 1.0, 2.0]).collect();
    let input = write_embeddings(f.dir.path(), "data", "resnet", &rows);
    let out = p2l(&[
        "profile",
        "--input",
        input.to_str().unwrap(),
        "--name",
        "data",
        "--size",
        "auto",
        "--registry",
        &f.registry(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "name,role,size,dim,extractor_id\ndata,source,100,3,resnet\n");
    let json = Path::new(&f.registry()).join("data.profile.json");
    assert!(json.is_file());
    let before = fs::read(&json).unwrap();

    let again = p2l(&[
        "profile",
        "--input",
        input.to_str().unwrap(),
        "--name",
        "data",
        "--size",
        "7",
        "--registry",
        &f.registry(),
    ]);
    assert_eq!(code(&again), 3);
    assert_eq!(fs::read(&json).unwrap(), before);

    let forced = p2l(&[
        "profile",
        "--input",
        input.to_str().unwrap(),
        "--name",
        "data",
        "--size",
        "7",
        "--force",
        "--registry",
        &f.registry(),
    ]);
    assert_eq!(code(&forced), 0);
    assert!(stdout(&forced).contains("data,source,7,3,resnet"));
}

#[test]
fn registry_from_environment() {
    let f = Fixture::new();
    let input = write_embeddings(f.dir.path(), "x", "e", &[vec![1.0, 2.0]]);
    let out = Command::new(env!("CARGO_BIN_EXE_p2l"))
        .args(["profile", "--input", input.to_str().unwrap(), "--name", "x"])
        .env("P2L_REGISTRY", f.registry())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let list = p2l(&["list", "--registry", &f.registry()]);
    assert_eq!(stdout(&list), "name,role,size,dim,extractor_id\nx,source,1,2,e\n");
}

#[test]
fn input_errors_exit_2() {
    let f = Fixture::new();
    let bad = f.file("bad.csv", "# p2l-embeddings v1 dim=2 extractor=e\n1,2\n3\n");
    let out = p2l(&["profile", "--input", &bad, "--name", "b", "--registry", &f.registry()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    assert!(stdout(&out).is_empty());
    let neg = f.file("neg.csv", "# p2l-embeddings v1 dim=2 extractor=e\n-1,2\n");
    assert_eq!(code(&p2l(&["profile", "--input", &neg, "--name", "n", "--registry", &f.registry()])), 2);
    let ok = f.file("ok.csv", "# p2l-embeddings v1 dim=2 extractor=e\n1,2\n");
    for name in ["a b", "../x", ""] {
        let out = p2l(&["profile", "--input", &ok, "--name", name, "--registry", &f.registry()]);
        assert_eq!(code(&out), 2, "{name:?}");
    }
    assert_eq!(code(&p2l(&["rank", "--registry", &f.registry()])), 2);
    assert_eq!(code(&p2l(&["no-such-command"])), 2);
    assert_eq!(code(&p2l(&["--help"])), 0);
}

fn ranking_fixture() -> Fixture {
    let f = Fixture::new();
    f.add("big", "source", 100_000, [0.1, 0.1, 0.8]);
    f.add("mid", "source", 5_000, [0.4, 0.3, 0.3]);
    f.add("near", "source", 800, [0.7, 0.2, 0.1]);
    f.add("tiny", "source", 50, [0.6, 0.3, 0.1]);
    f.add("goal", "target", 40, [0.8, 0.1, 0.1]);
    f
}

#[test]
fn rank_with_k_zero_is_size_order() {
    let f = ranking_fixture();
    let out = p2l(&["rank", "--target", "goal", "--k", "0", "--registry", &f.registry()]);
    assert_eq!(code(&out), 0);
    let names: Vec<String> = csv_rows(&stdout(&out)).into_iter().map(|r| r[1].clone()).collect();
    assert_eq!(names, ["big", "mid", "near", "tiny"]);
}

#[test]
fn rank_top_one() {
    let f = ranking_fixture();
    let out = p2l(&["rank", "--target", "goal", "--top", "1", "--registry", &f.registry()]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("rank,name,size,distance,log_size,z_log_size,z_distance,score\n1,"));
}

fn population_z(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    values.iter().map(|v| (v - mean) / sd).collect()
}

#[test]
fn rank_output_satisfies_the_score_identity() {
    let f = ranking_fixture();
    for (kind, k) in [("KL", "-1.5"), ("JSD", "-0.25"), ("CHI2", "-3"), ("EUC", "-1"), ("CITYBLOCK", "-2")] {
        let out = p2l(&["rank", "--target", "goal", "--distance", kind, "--k", k, "--registry", &f.registry()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let k: f64 = k.parse().unwrap();
        let rows: Vec<Vec<f64>> = csv_rows(&stdout(&out))
            .into_iter()
            .map(|r| {
                let mut v: Vec<f64> = vec![r[0].parse().unwrap()];
                v.extend(r[2..].iter().map(|c| c.parse::<f64>().unwrap()));
                v
            })
            .collect();
        let (size, dist, log_size, z_size, z_dist, score) = (1, 2, 3, 4, 5, 6);
        let zs = population_z(&rows.iter().map(|r| r[log_size]).collect::<Vec<_>>());
        let zd = population_z(&rows.iter().map(|r| r[dist]).collect::<Vec<_>>());
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r[0] as usize, i + 1);
            assert!((r[log_size] - r[size].ln()).abs() < 1e-12);
            assert!((r[z_size] - zs[i]).abs() < 1e-9);
            assert!((r[z_dist] - zd[i]).abs() < 1e-9);
            assert!((r[score] - (r[z_size] + k * r[z_dist])).abs() < 1e-12);
        }
        assert!(rows.windows(2).all(|w| w[0][score] >= w[1][score]));
    }
}

#[test]
fn rank_baselines_block() {
    let f = ranking_fixture();
    let out = p2l(&[
        "rank",
        "--target",
        "goal",
        "--k",
        "-3",
        "--baselines",
        "--reference",
        "mid",
        "--seed",
        "11",
        "--registry",
        &f.registry(),
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let block = text.split("\n\n").nth(1).unwrap();
    let lines: Vec<&str> = block.lines().collect();
    assert_eq!(lines[0], "baseline,pick");
    assert_eq!(lines[1], "B1,big");
    assert_eq!(lines[2], "B2,mid");
    assert!(lines[3].starts_with("B3,"));
    assert_eq!(lines[4], "B5,near");
    let again = p2l(&[
        "rank", "--target", "goal", "--k", "-3", "--baselines", "--reference", "mid", "--seed", "11", "--registry",
        &f.registry(),
    ]);
    assert_eq!(stdout(&again), text);

    let missing = p2l(&[
        "rank", "--target", "goal", "--baselines", "--reference", "nobody", "--registry", &f.registry(),
    ]);
    assert_eq!(code(&missing), 4);
}

#[test]
fn rank_target_from_files() {
    let f = ranking_fixture();
    let emb = write_embeddings(f.dir.path(), "fresh", "ext", &[vec![0.8, 0.1, 0.1]]);
    let out = p2l(&["rank", "--target", emb.to_str().unwrap(), "--k", "-3", "--registry", &f.registry()]);
    assert_eq!(code(&out), 0);
    assert_eq!(csv_rows(&stdout(&out))[0][1], "near");
    let json = Path::new(&f.registry()).join("goal.profile.json");
    let out = p2l(&["rank", "--target", json.to_str().unwrap(), "--k", "-3", "--registry", &f.registry()]);
    assert_eq!(code(&out), 0);
    assert_eq!(csv_rows(&stdout(&out))[0][1], "near");
}

#[test]
fn mixed_extractors_need_override() {
    let f = ranking_fixture();
    let other = write_embeddings(f.dir.path(), "alien", "other-net", &[vec![0.5, 0.2, 0.3]]);
    let out = p2l(&["profile", "--input", other.to_str().unwrap(), "--name", "alien", "--registry", &f.registry()]);
    assert_eq!(code(&out), 0);
    let out = p2l(&["rank", "--target", "goal", "--registry", &f.registry()]);
    assert_eq!(code(&out), 2);
    let out = p2l(&["rank", "--target", "goal", "--allow-mixed-extractors", "--registry", &f.registry()]);
    assert_eq!(code(&out), 0);
    assert_eq!(csv_rows(&stdout(&out)).len(), 5);
}

#[test]
fn unknown_target_exits_4() {
    let f = ranking_fixture();
    assert_eq!(code(&p2l(&["rank", "--target", "ghost", "--registry", &f.registry()])), 4);
}

#[test]
fn calibrate_monotone_size_task() {
    let f = ranking_fixture();
    let truth = f.file(
        "truth.csv",
        "target,source,perf_transfer,perf_scratch\n\
         goal,tiny,0.30,0.2\ngoal,near,0.40,0.2\ngoal,mid,0.50,0.2\ngoal,big,0.60,0.2\n",
    );
    let grid = f.dir.path().join("grid.csv");
    let out = p2l(&[
        "calibrate",
        "--ground-truth",
        &truth,
        "--out",
        grid.to_str().unwrap(),
        "--registry",
        &f.registry(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&stdout(&out));
    assert_eq!(rows[0][0], "0.00");
    assert_eq!(rows[0][1], "KL");
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 1.0);
    let grid = fs::read_to_string(grid).unwrap();
    assert!(grid.starts_with("k,distance,mean_rho\n-3.00,KL,"));
    assert_eq!(grid.lines().count(), 1 + 61 * 5);
}

#[test]
fn calibrate_input_errors() {
    let f = ranking_fixture();
    let grid = f.dir.path().join("grid.csv");
    let grid = grid.to_str().unwrap();
    let run = |truth: &str| {
        let t = f.file("t.csv", truth);
        code(&p2l(&["calibrate", "--ground-truth", &t, "--out", grid, "--registry", &f.registry()]))
    };
    let header = "target,source,perf_transfer,perf_scratch\n";
    assert_eq!(run(&format!("{header}goal,ghost,0.3,0.2\ngoal,near,0.4,0.2\ngoal,mid,0.5,0.2\n")), 4);
    assert_eq!(run(&format!("{header}nobody,tiny,0.3,0.2\nnobody,near,0.4,0.2\nnobody,mid,0.5,0.2\n")), 4);
    assert_eq!(run(&format!("{header}goal,tiny,abc,0.2\n")), 2);
    assert_eq!(run(&format!("{header}goal,tiny,0.3\n")), 2);
    assert_eq!(run(&format!("{header}goal,tiny,0.3,0.2\ngoal,near,0.4,0.25\ngoal,mid,0.5,0.2\n")), 2);
    assert_eq!(run(header), 2);
    assert_eq!(run(&format!("{header}goal,tiny,0.3,0.2\ngoal,near,0.4,0.2\n")), 2);
}

#[test]
fn evaluate_reproduces_gain_arithmetic() {
    let f = ranking_fixture();
    // Shaped like the CUBS row of a published gain table: 1.00, 0.00, 0.28, 4.28.
    let truth = f.file(
        "truth.csv",
        "target,source,perf_transfer,perf_scratch\n\
         goal,near,0.528,0.1\ngoal,big,0.264,0.1\ngoal,mid,0.4125,0.1\n",
    );
    let out = p2l(&[
        "evaluate",
        "--ground-truth",
        &truth,
        "--k",
        "-3",
        "--reference",
        "mid",
        "--registry",
        &f.registry(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(
        text.lines().next().unwrap(),
        "target,p2l_pick,best,attempts_p2l,attempts_b1,attempts_b5,gain_B1,gain_B5,gain_B2,gain_B3,gain_B4"
    );
    assert_eq!(text.lines().nth(1).unwrap(), "goal,near,near,1,3,1,1.00,0.00,0.28,,4.28");
}

#[test]
fn merge_writes_a_profile() {
    let f = ranking_fixture();
    let out = p2l(&["merge", "--name", "pool", "--members", "mid,near", "--registry", &f.registry()]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "name,size,dim,members\npool,5800,3,mid|near\n");
    assert!(Path::new(&f.registry()).join("pool.profile.json").is_file());
    let again = p2l(&["merge", "--name", "pool", "--members", "mid,near", "--registry", &f.registry()]);
    assert_eq!(code(&again), 3);
    let unknown = p2l(&["merge", "--name", "p2", "--members", "mid,ghost", "--registry", &f.registry()]);
    assert_eq!(code(&unknown), 4);
    let single = p2l(&["merge", "--name", "p3", "--members", "mid", "--registry", &f.registry()]);
    assert_eq!(code(&single), 2);
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_is_byte_identical_and_feeds_the_other_commands() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let r = p2l(&["simulate", "--seed", "3", "--sources", "4", "--targets", "3", "--calibration-targets", "4", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() >= 10);
    assert_eq!(ta, tb);

    let registry = a.join("registry");
    let registry = registry.to_str().unwrap();
    let grid = dir.path().join("grid.csv");
    let cal = p2l(&[
        "calibrate",
        "--ground-truth",
        a.join("calibration_truth.csv").to_str().unwrap(),
        "--out",
        grid.to_str().unwrap(),
        "--registry",
        registry,
    ]);
    assert_eq!(code(&cal), 0, "{}", String::from_utf8_lossy(&cal.stderr));
    let best = &csv_rows(&stdout(&cal))[0];
    let summary = fs::read_to_string(a.join("summary.txt")).unwrap();
    assert!(summary.contains(&format!("k: {}", best[0])), "{summary}");
    assert!(summary.contains(&format!("distance: {}", best[1])));

    let eval = p2l(&[
        "evaluate",
        "--ground-truth",
        a.join("evaluation_truth.csv").to_str().unwrap(),
        "--distance",
        &best[1],
        "--k",
        &best[0],
        "--registry",
        registry,
    ]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    assert_eq!(csv_rows(&stdout(&eval)).len(), 3);
}
