use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kaem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kaem"))
        .args(args)
        .output()
        .expect("spawn kaem")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &[
    "--set",
    "prior.q=2",
    "--set",
    "prior.p=2",
    "--set",
    "prior.grid_size=8",
    "--set",
    "prior.quad_nodes=60",
    "--set",
    "gen.kind=mlp",
    "--set",
    "gen.hidden=8",
    "--set",
    "train.criterion=mle-ula",
    "--set",
    "train.batch_size=10",
    "--set",
    "train.particles=4",
    "--set",
    "train.epochs=2",
    "--set",
    "train.metrics_every=1",
    "--set",
    "train.checkpoint_every=5",
    "--set",
    "ula.steps=5",
];

fn train_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--dataset",
        "rings8:60",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    kaem(&args)
}

#[test]
fn no_arguments_is_a_usage_error() {
    let o = kaem(&[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = kaem(&["validate", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&kaem(&["--help"])), 0);
}

#[test]
fn validate_resampling_passes() {
    let o = kaem(&["validate", "--suite", "resampling", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("PASS"), "{}", stdout(&o));
}

#[test]
fn bad_config_key_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = kaem(&[
        "train",
        "--dataset",
        "rings8:20",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "prior.nonsense=3",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nonsense"));
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = kaem(&[
        "train",
        "--dataset",
        "/no/such/file.idx",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_sample_plot_interpolate() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = train_small(&run, &["--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 12);
    assert!(metrics.starts_with("update,objective"));
    let ckpt = run.join("checkpoints/final.ckpt");
    assert!(ckpt.exists());
    assert!(run.join("checkpoints/update-5.ckpt").exists());
    assert!(run.join("checkpoints/epoch-1.ckpt").exists());
    let ck = ckpt.to_str().unwrap();

    let s = dir.path().join("s");
    let o = kaem(&[
        "sample",
        "--checkpoint",
        ck,
        "--num",
        "7",
        "--out",
        s.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(s.join("samples.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);

    // two-dimensional output has no image shape
    let o = kaem(&[
        "sample",
        "--checkpoint",
        ck,
        "--num",
        "2",
        "--out",
        s.to_str().unwrap(),
        "--format",
        "png",
    ]);
    assert_eq!(code(&o), 1);

    let p = dir.path().join("p");
    let o = kaem(&[
        "plot-prior",
        "--checkpoint",
        ck,
        "--dims",
        "0,1",
        "--out",
        p.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = fs::read_to_string(p.join("prior_dim1.svg")).unwrap();
    assert!(svg.starts_with("<?xml") || svg.starts_with("<svg"));
    assert_eq!(
        fs::read_to_string(p.join("prior_dim0.csv"))
            .unwrap()
            .lines()
            .count(),
        513
    );
    let o = kaem(&[
        "plot-prior",
        "--checkpoint",
        ck,
        "--dims",
        "9",
        "--out",
        p.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);

    let i = dir.path().join("i");
    let o = kaem(&[
        "interpolate",
        "--checkpoint",
        ck,
        "--pairs",
        "2",
        "--steps",
        "5",
        "--out",
        i.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(i.join("interpolation.csv"))
            .unwrap()
            .lines()
            .count(),
        11
    );
}

#[test]
fn outputs_are_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&train_small(&a, &["--seed", "11"])), 0);
    assert_eq!(code(&train_small(&b, &["--seed", "11"])), 0);
    assert_eq!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("checkpoints/final.ckpt")).unwrap(),
        fs::read(b.join("checkpoints/final.ckpt")).unwrap()
    );
    for run in [&a, &b] {
        let ck = run.join("checkpoints/final.ckpt");
        let o = kaem(&[
            "sample",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--num",
            "5",
            "--seed",
            "2",
            "--out",
            run.join("s").to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(
        fs::read(a.join("s/samples.csv")).unwrap(),
        fs::read(b.join("s/samples.csv")).unwrap()
    );
    let c = dir.path().join("c");
    assert_eq!(code(&train_small(&c, &["--seed", "12"])), 0);
    assert_ne!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(c.join("metrics.csv")).unwrap()
    );
}

#[test]
fn resume_reproduces_the_uninterrupted_log() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    assert_eq!(code(&train_small(&full, &["--seed", "4"])), 0);
    let part = dir.path().join("part");
    fs::create_dir_all(&part).unwrap();
    let ck = full.join("checkpoints/update-5.ckpt");
    let o = kaem(&[
        "train",
        "--dataset",
        "rings8:60",
        "--out",
        part.to_str().unwrap(),
        "--resume",
        ck.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let full_log = fs::read_to_string(full.join("metrics.csv")).unwrap();
    let tail: Vec<&str> = full_log.lines().skip(1 + 5).collect();
    let part_log = fs::read_to_string(part.join("metrics.csv")).unwrap();
    let resumed: Vec<&str> = part_log.lines().skip(1).collect();
    assert_eq!(resumed, tail);
    assert_eq!(
        fs::read(full.join("checkpoints/final.ckpt")).unwrap(),
        fs::read(part.join("checkpoints/final.ckpt")).unwrap()
    );
}

#[test]
fn thermo_writes_tempering_trace() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("t");
    let o = train_small(
        &run,
        &[
            "--set",
            "train.criterion=thermo",
            "--set",
            "thermo.num_temps=3",
            "--set",
            "train.epochs=1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(run.join("tempering_trace.csv")).unwrap();
    assert!(trace.starts_with("update,k,t_k,E_k,swap_accept_rate"));
    // 6 updates × 4 temperatures
    assert_eq!(trace.lines().count(), 1 + 6 * 4);
}

fn write_idx(path: &Path, n: u32, side: u32) {
    let mut b = 0x803u32.to_be_bytes().to_vec();
    for d in [n, side, side] {
        b.extend(d.to_be_bytes());
    }
    for i in 0..n * side * side {
        b.push(((i * 37) % 256) as u8);
    }
    fs::write(path, b).unwrap();
}

#[test]
fn idx_training_and_png_samples() {
    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("tiny-images.idx");
    write_idx(&idx, 20, 4);
    let run = dir.path().join("r");
    let o = kaem(&[
        "train",
        "--dataset",
        idx.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--set",
        "prior.q=2",
        "--set",
        "prior.p=2",
        "--set",
        "prior.grid_size=6",
        "--set",
        "gen.grid_size=5",
        "--set",
        "train.batch_size=10",
        "--set",
        "train.particles=8",
        "--set",
        "train.epochs=1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = dir.path().join("s");
    let ck = run.join("checkpoints/final.ckpt");
    let o = kaem(&[
        "sample",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--num",
        "3",
        "--format",
        "png",
        "--out",
        s.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pngs = fs::read_dir(&s)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("sample_")
        })
        .count();
    assert_eq!(pngs, 3);
    assert_eq!(&fs::read(s.join("samples_grid.png")).unwrap()[1..4], b"PNG");
}
