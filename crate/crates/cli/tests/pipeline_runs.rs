//! End-to-end runs over synthetic data with mock backends.

mod common;

use std::fs;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use ramp_cli::pipeline::Pipeline;
use ramp_cli::{cmd_report, cmd_run, cmd_sweep};
use ramp_core::generation::EchoBackend;
use ramp_core::prompting::PromptMode;

const RAMP_K2: &str = "mode = \"ramp\"\nk = 2\nregime = \"same-language\"";

#[test]
fn smoke_run_writes_reports_quickly() {
    let fx = Fixture::new(2);
    let started = Instant::now();
    let outcome = cmd_run(fx.config("smoke", RAMP_K2, ECHO)).unwrap();
    assert!(started.elapsed().as_secs_f64() < 10.0);
    assert_eq!(outcome.combined.average.n, 20);
    let out = fx.out("smoke");
    for f in ["report-ramp-k2.csv", "report-ramp-k2.md", "generations-ramp-k2.jsonl", "judgments-ramp-k2.jsonl", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    // 5 languages x 2 attributes, plus header and AVG
    assert_eq!(read(&out.join("report-ramp-k2.csv")).lines().count(), 12);
}

#[test]
fn warm_rerun_issues_no_backend_calls() {
    let fx = Fixture::new(2);
    let cfg = fx.config("warm", RAMP_K2, ECHO);
    let mut first = Pipeline::open(cfg.clone()).unwrap();
    first.run_setting(PromptMode::Ramp, 2).unwrap();
    assert!(first.embed_calls() > 0);
    assert_eq!(first.generate_calls(), 20);
    let csv = read(&fx.out("warm").join("report-ramp-k2.csv"));
    drop(first);

    let mut second = Pipeline::open(cfg).unwrap();
    second.run_setting(PromptMode::Ramp, 2).unwrap();
    assert_eq!(second.embed_calls(), 0);
    assert_eq!(second.generate_calls(), 0);
    assert_eq!(read(&fx.out("warm").join("report-ramp-k2.csv")), csv);
}

#[test]
fn generation_cache_is_shared_across_output_dirs() {
    let fx = Fixture::new(2);
    let shared = "cache_dir = \"shared-cache\"\n";
    let mut a = Pipeline::open(fx.config("a", &format!("{RAMP_K2}\n{shared}"), ECHO)).unwrap();
    a.run_setting(PromptMode::Ramp, 2).unwrap();
    let mut b = Pipeline::open(fx.config("b", &format!("{RAMP_K2}\n{shared}"), ECHO)).unwrap();
    b.run_setting(PromptMode::Ramp, 2).unwrap();
    assert_eq!(b.embed_calls(), 0);
    assert_eq!(b.generate_calls(), 0);
}

#[test]
fn three_seeds_give_three_reports_and_an_average() {
    let fx = Fixture::new(2);
    let cfg = fx.config("seeds", "mode = \"base\"\nk = 2\nregime = \"same-language\"\nseeds = [1, 2, 3]", ECHO);
    let outcome = cmd_run(cfg).unwrap();
    assert_eq!(outcome.per_seed.len(), 3);
    let out = fx.out("seeds");
    for s in 1..=3 {
        assert!(out.join(format!("report-base-k2-seed{s}.csv")).exists());
    }
    assert!(out.join("report-base-k2.csv").exists());
    let reports: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.unwrap().file_name().into_string().ok())
        .filter(|n| n.starts_with("report-") && n.ends_with(".csv"))
        .collect();
    assert_eq!(reports.len(), 4, "{reports:?}");
}

#[test]
fn seeds_change_random_selection() {
    let fx = Fixture::new(2);
    let cfg = fx.config("sel", "mode = \"base\"\nk = 4\nregime = \"same-language\"", ECHO);
    let mut p = Pipeline::open_with_backend(cfg, Arc::new(EchoBackend::new(""))).unwrap();
    let a = p.plan(PromptMode::Base, 4, Some(1)).unwrap();
    let b = p.plan(PromptMode::Base, 4, Some(2)).unwrap();
    let a_again = p.plan(PromptMode::Base, 4, Some(1)).unwrap();
    let ids = |v: &[ramp_cli::pipeline::PlannedPrompt]| -> Vec<Vec<String>> {
        v.iter().map(|p| p.prompt.input_example_ids.clone()).collect()
    };
    assert_eq!(ids(&a), ids(&a_again));
    assert_ne!(ids(&a), ids(&b));
    // Base prompts carry no marking sentence.
    assert!(a.iter().all(|p| !p.prompt.text.contains("by using words such as")));
}

#[test]
fn sweep_has_one_row_per_k_and_mode() {
    let fx = Fixture::new(2);
    let cfg = fx.config("sweep", "mode = \"ramp\"\nk = 4\nregime = \"same-language\"", ECHO);
    let outcome = cmd_sweep(cfg, &[4, 8], &[PromptMode::Base, PromptMode::Ramp]).unwrap();
    assert!(outcome.failed.is_empty());
    let csv = read(&fx.out("sweep").join("sweep.csv"));
    let keys: Vec<String> = csv.lines().skip(1).map(|l| l.split(',').take(2).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(keys, ["4,base", "4,ramp", "8,base", "8,ramp"]);
    assert!(fx.out("sweep").join("sweep.md").exists());
}

#[test]
fn k_zero_renders_zero_shot_prompts() {
    let fx = Fixture::new(2);
    let cfg = fx.config("zero", "mode = \"ramp\"\nk = 0\nregime = \"same-language\"", ECHO);
    let mut p = Pipeline::open(cfg.clone()).unwrap();
    let planned = p.plan(PromptMode::Ramp, 0, None).unwrap();
    assert!(planned.iter().all(|p| p.prompt.block_count == 0 && p.prompt.input_example_ids.is_empty()));
    assert!(planned.iter().all(|p| !p.prompt.text.contains('\n')));
    drop(p);
    let outcome = cmd_sweep(cfg, &[0, 4], &[PromptMode::Ramp]).unwrap();
    assert_eq!(outcome.rows.len(), 2);
    assert_eq!(outcome.rows[0].k, 0);
}

#[test]
fn sweep_row_matches_single_run() {
    let fx = Fixture::new(2);
    let exp = "mode = \"base\"\nk = 4\nregime = \"same-language\"\nseeds = [1, 2]";
    cmd_sweep(fx.config("sw", exp, ECHO), &[4], &[PromptMode::Base]).unwrap();
    cmd_run(fx.config("single", exp, ECHO)).unwrap();
    let sweep = read(&fx.out("sw").join("sweep.csv"));
    let sweep_row: Vec<&str> = sweep.lines().nth(1).unwrap().split(',').skip(2).collect();
    let report = read(&fx.out("single").join("report-base-k4.csv"));
    let avg: Vec<&str> = report.lines().last().unwrap().split(',').collect();
    assert_eq!(&avg[..2], ["AVG", "*"]);
    assert_eq!(sweep_row, avg[2..].to_vec());
}

#[test]
fn reports_are_byte_identical_across_runs_and_parallelism() {
    let fx = Fixture::new(2);
    let exp = "mode = \"base\"\nk = 4\nregime = \"same-language\"\nseeds = [1, 2]";
    let mut csvs = Vec::new();
    for (name, par) in [("p1", 1), ("p8", 8), ("p8b", 8)] {
        let rest = format!("{ECHO}\n\n[generation]\nparallelism = {par}");
        cmd_run(fx.config(name, exp, &rest)).unwrap();
        let out = fx.out(name);
        csvs.push((read(&out.join("report-base-k4.csv")), read(&out.join("generations-base-k4-seed2.jsonl"))));
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[1], csvs[2]);
}

/// Plans prompts for every seed of `mode`, programs a table that answers
/// with `completion(id)`, and runs the setting against it.
fn run_with_table(fx: &Fixture, name: &str, exp: &str, mode: PromptMode, k: usize, completion: impl Fn(&str) -> String) -> String {
    let cfg = fx.config(name, exp, &format!("[backend]\nkind = \"table-mock\"\ntable = \"{name}.table\""));
    let mut p = Pipeline::open_with_backend(cfg.clone(), Arc::new(EchoBackend::new(""))).unwrap();
    let mut prompts = Vec::new();
    for seed in cfg.effective_seeds(mode) {
        prompts.extend(p.plan(mode, k, seed).unwrap().into_iter().map(|pp| (pp.row.id, pp.prompt.text)));
    }
    drop(p);
    fs::write(fx.path(&format!("{name}.table")), table_for(&prompts, completion)).unwrap();
    let outcome = cmd_run(cfg).unwrap();
    outcome.combined.to_csv().unwrap()
}

fn assert_all_cells(csv: &str, bleu: &str, lex: &str) {
    let rows = csv_rows(csv);
    assert_eq!(rows.len(), 11, "{csv}");
    for r in rows {
        if !bleu.is_empty() {
            assert_eq!(r[3], bleu, "{csv}");
        }
        assert_eq!(r[4], lex, "{csv}");
    }
}

#[test]
fn gold_references_score_perfectly() {
    let fx = Fixture::new(2);
    for (name, exp, mode) in [
        ("gold-ramp", "mode = \"ramp\"\nk = 4\nregime = \"same-language\"", PromptMode::Ramp),
        ("gold-base", "mode = \"base\"\nk = 4\nregime = \"same-language\"\nseeds = [1, 2]", PromptMode::Base),
        ("gold-xl", "mode = \"ramp\"\nk = 8\nregime = \"cross-lingual\"", PromptMode::Ramp),
    ] {
        let k = if name == "gold-xl" { 8 } else { 4 };
        let csv = run_with_table(&fx, name, exp, mode, k, |id| fx.gold(id).example.target_text.clone());
        assert_all_cells(&csv, "100.0000", "1.0000");
    }
}

#[test]
fn opposite_references_score_zero_lexical_accuracy() {
    let fx = Fixture::new(2);
    let exp = "mode = \"ramp\"\nk = 4\nregime = \"same-language\"";
    let csv = run_with_table(&fx, "opp", exp, PromptMode::Ramp, 4, |id| fx.gold(id).contrastive.clone());
    assert_all_cells(&csv, "", "0.0000");
}

#[test]
fn offline_scorer_drops_the_column() {
    let fx = Fixture::new(2);
    let rest = format!("{ECHO}\n\n[scorer]\nurl = \"http://127.0.0.1:9\"\ncomet = true\ntimeout_secs = 2");
    let outcome = cmd_run(fx.config("scorer", RAMP_K2, &rest)).unwrap();
    assert!(!outcome.combined.has_comet());
    let csv = read(&fx.out("scorer").join("report-ramp-k2.csv"));
    assert_eq!(csv.lines().next().unwrap(), "tgt_lang,attribute,n,bleu,lex_acc,lang_pass_rate");
}

#[test]
fn report_command_rebuilds_from_judgments() {
    let fx = Fixture::new(2);
    let exp = "mode = \"base\"\nk = 2\nregime = \"same-language\"\nseeds = [1, 2]";
    let cfg = fx.config("rep", exp, ECHO);
    cmd_sweep(cfg.clone(), &[2], &[PromptMode::Base]).unwrap();
    let out = fx.out("rep");
    let before: Vec<String> = ["report-base-k2.csv", "report-base-k2-seed1.md", "sweep.csv"]
        .iter()
        .map(|f| read(&out.join(f)))
        .collect();
    for f in ["report-base-k2.csv", "report-base-k2-seed1.md", "sweep.csv"] {
        fs::remove_file(out.join(f)).unwrap();
    }
    assert_eq!(cmd_report(&cfg).unwrap(), 4);
    let after: Vec<String> = ["report-base-k2.csv", "report-base-k2-seed1.md", "sweep.csv"]
        .iter()
        .map(|f| read(&out.join(f)))
        .collect();
    assert_eq!(before, after);
}

#[test]
fn changed_backend_regenerates() {
    let fx = Fixture::new(2);
    cmd_run(fx.config("chg", RAMP_K2, ECHO)).unwrap();
    let other = "[backend]\nkind = \"echo-mock\"\ncanned = \" Hallo du.\\n\"";
    let mut p = Pipeline::open(fx.config("chg", RAMP_K2, other)).unwrap();
    p.run_setting(PromptMode::Ramp, 2).unwrap();
    assert_eq!(p.generate_calls(), 20);
}
