//! Command-line behaviour: exit codes, machine output, files and determinism.

use std::path::PathBuf;

use stokes_atlas::cli::{
    run, ConstantsReport, EvalReport, GraphSummary, LateTermsReport, SaddleReport, TablesReport, TransportReport, TurningReport,
    EXIT_DEGENERATE, EXIT_INVALID, EXIT_OK,
};
use stokes_atlas::io::{graph_to_json, read_graph, RegionFixture};
use stokes_atlas::REFERENCE_CHI;

struct Output {
    code: i32,
    out: String,
    err: String,
}

fn cli(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("stokes-atlas").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Output { code, out: String::from_utf8(out).expect("utf-8"), err: String::from_utf8(err).expect("utf-8") }
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("stokes-atlas-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

#[test]
fn saddles_report_reference_singulants() {
    let o = cli(&["--machine", "saddles"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.err);
    let r: SaddleReport = serde_json::from_str(&o.out).expect("report parses");
    assert_eq!(r.saddles.len(), 4);
    for (s, (re, im)) in r.saddles.iter().zip(REFERENCE_CHI) {
        assert!((s.chi.re - re).abs() < 5e-5 && (s.chi.im - im).abs() < 5e-5, "{s:?}");
    }
}

#[test]
fn quadruple_root_is_degenerate_only_under_strict() {
    let lax = cli(&["--a", "0", "--b", "0", "--machine", "saddles", "--z", "0"]);
    assert_eq!(lax.code, EXIT_OK, "{}", lax.err);
    let r: SaddleReport = serde_json::from_str(&lax.out).expect("report parses");
    assert_eq!(r.degenerate.iter().map(|c| c.multiplicity).sum::<usize>(), 4);
    let strict = cli(&["--a", "0", "--b", "0", "--strict", "saddles", "--z", "0"]);
    assert_eq!(strict.code, EXIT_DEGENERATE);
}

#[test]
fn invalid_inputs_exit_with_code_two() {
    for args in [
        vec!["saddles", "--z", "3+zi"],
        vec!["saddles", "--z", "nan"],
        vec!["graph", "--domain", "1,0,0,1"],
        vec!["graph", "--filter", "sometimes"],
        vec!["transport", "--z", "1+i", "--beta", "1,0"],
        vec!["no-such-command"],
        vec!["--a", "inf", "saddles"],
    ] {
        let o = cli(&args);
        assert_eq!(o.code, EXIT_INVALID, "{args:?}: {}", o.err);
        assert!(!o.err.is_empty(), "{args:?} printed no diagnostic");
    }
}

#[test]
fn help_exits_cleanly() {
    let o = cli(&["--help"]);
    assert_eq!(o.code, EXIT_OK);
    for sub in ["saddles", "turning-points", "graph", "constants", "transport", "tables", "validate", "late-terms", "eval"] {
        assert!(o.out.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn turning_points_of_degenerate_panel() {
    let o = cli(&["--a", "-1", "--b", "0.6324555320336759", "--machine", "turning-points"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.err);
    let r: TurningReport = serde_json::from_str(&o.out).expect("report parses");
    assert_eq!(r.coalescence_class, 2);
    let mut re: Vec<f64> = r.turning.iter().map(|t| t.re).collect();
    re.sort_by(f64::total_cmp);
    assert!((re[0] + 0.15).abs() < 1e-10 && (re[1] - 1.2).abs() < 1e-10, "{re:?}");
}

#[test]
fn constants_match_base_matrix() {
    let o = cli(&["--machine", "constants"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.err);
    let r: ConstantsReport = serde_json::from_str(&o.out).expect("report parses");
    assert_eq!(r.rows, vec![vec![0, -1, 0, 0], vec![1, 0, 0, -1], vec![0, 0, 0, 1], vec![0, 1, -1, 0]]);
}

#[test]
fn graph_files_round_trip_and_are_deterministic() {
    let dir = scratch("graph");
    let (json_a, svg_a) = (dir.join("a.json"), dir.join("a.svg"));
    let (json_b, svg_b) = (dir.join("b.json"), dir.join("b.svg"));
    let a = cli(&["--machine", "graph", "--out", json_a.to_str().unwrap(), "--svg", svg_a.to_str().unwrap()]);
    assert_eq!(a.code, EXIT_OK, "{}", a.err);
    let b = cli(&["--machine", "graph", "--out", json_b.to_str().unwrap(), "--svg", svg_b.to_str().unwrap()]);
    assert_eq!(a.out, b.out);
    let text_a = std::fs::read(&json_a).unwrap();
    assert_eq!(text_a, std::fs::read(&json_b).unwrap());
    assert_eq!(std::fs::read(&svg_a).unwrap(), std::fs::read(&svg_b).unwrap());

    let g = read_graph(&json_a).expect("graph reads back");
    assert_eq!(graph_to_json(&g).unwrap().as_bytes(), text_a.as_slice());
    let summary: GraphSummary = serde_json::from_str(&a.out).expect("summary parses");
    assert_eq!(summary.curves, g.curves.len());
    let mut counts: Vec<usize> = summary.ordinary_crossings.iter().map(|(_, n)| *n).collect();
    counts.sort();
    assert_eq!(counts, vec![3, 3, 3, 6]);

    let svg = std::fs::read_to_string(&svg_a).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(svg.contains("stroke-width=\"2\"") && svg.contains("stroke-width=\"1\""));

    let reuse = cli(&["--machine", "graph", "--graph", json_a.to_str().unwrap()]);
    assert_eq!(reuse.code, EXIT_OK, "{}", reuse.err);
    assert_eq!(reuse.out, a.out);

    let bumped = String::from_utf8(text_a).unwrap().replacen("\"format_version\": 1", "\"format_version\": 2", 1);
    let future = dir.join("future.json");
    std::fs::write(&future, bumped).unwrap();
    let o = cli(&["graph", "--graph", future.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_INVALID, "{}", o.err);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn transport_there_and_back_restores_the_base_state() {
    let there = cli(&["--machine", "transport", "--z", "1+4.5i"]);
    assert_eq!(there.code, EXIT_OK, "{}", there.err);
    let r: TransportReport = serde_json::from_str(&there.out).expect("report parses");
    assert_eq!(r.end.stokes, vec![-1, 0, 1, -1, -1, 1]);
    assert_eq!(r.end.sigma[0], "b1-b2");
    let back = cli(&["--machine", "transport", "--z0", "1+4.5i", "--z", "3+0.5i"]);
    assert_eq!(back.code, EXIT_OK, "{}", back.err);
    let b: TransportReport = serde_json::from_str(&back.out).expect("report parses");
    assert_eq!(b.end.stokes, vec![-1, 0, 0, 0, -1, 1]);
    assert_eq!(b.end.sigma, vec!["b1", "b2", "b3", "b4"]);
    assert_eq!(b.events.len(), r.events.len());
}

#[test]
fn tables_reproduce_fixture_a_rows_and_write_csv() {
    let dir = scratch("tables");
    let o = cli(&["--machine", "tables", "--out", dir.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_OK, "{}", o.err);
    let r: TablesReport = serde_json::from_str(&o.out).expect("report parses");
    assert!(r.stokes_mismatches.iter().all(|l| l.starts_with('c')), "{:?}", r.stokes_mismatches);
    let expected = RegionFixture::builtin().expected_stokes_csv().unwrap();
    for line in expected.lines().filter(|l| l.starts_with("region") || l.starts_with('a')) {
        assert!(r.stokes_csv.lines().any(|g| g == line), "missing {line}");
    }
    assert_eq!(std::fs::read_to_string(dir.join("stokes.csv")).unwrap(), r.stokes_csv);
    assert_eq!(std::fs::read_to_string(dir.join("sigma.csv")).unwrap(), r.sigma_csv);
    let numeric = cli(&["--machine", "tables", "--beta", "1,0,0,0"]);
    let n: TablesReport = serde_json::from_str(&numeric.out).expect("report parses");
    assert!(n.sigma_csv.lines().any(|l| l == "b5,1,-1,0,-1"), "{}", n.sigma_csv);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn late_terms_estimate_nearest_constant() {
    let o = cli(&["--machine", "late-terms", "--target", "2"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.err);
    let r: LateTermsReport = serde_json::from_str(&o.out).expect("report parses");
    assert_eq!(r.terms.len(), 41);
    let s12 = r.limit.expect("limit requested").value;
    assert!((s12.re + 1.0).abs() < 1e-2 && s12.im.abs() < 1e-2);
}

#[test]
fn eval_in_scaled_and_physical_variables_agree() {
    let scaled = cli(&["--machine", "eval", "--z", "1-1i", "--eps", "0.2"]);
    assert_eq!(scaled.code, EXIT_OK, "{}", scaled.err);
    let s: EvalReport = serde_json::from_str(&scaled.out).expect("report parses");
    assert!(s.relative_error < 1e-8);
    assert!(s.physical.0.im.abs() > 0.0, "complex z maps to complex x1");
    let phys = cli(&["--machine", "eval", "--physical", "2,0.5,-1"]);
    assert_eq!(phys.code, EXIT_OK, "{}", phys.err);
    let p: EvalReport = serde_json::from_str(&phys.out).expect("report parses");
    assert!((p.z.norm() - 1.0).abs() < 1e-12);
    assert!((p.physical.0.re - 2.0).abs() < 1e-12 && (p.physical.1 - 0.5).abs() < 1e-12 && (p.physical.2 + 1.0).abs() < 1e-12);
}
