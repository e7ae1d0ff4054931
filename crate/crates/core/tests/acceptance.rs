//! Acceptance suite. Each test prints one PASS/FAIL line (written straight to
//! stderr so it shows without --nocapture) and then asserts.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use triage_core::cohort::{calibrate, generate_with, CohortConfig, EffectMode};
use triage_core::counterfactual::{bound_curves, mvpf, parse_grid, DecisionData, DecisionRule, MvpfClass, apply_rule};
use triage_core::frame::Frame;
use triage_core::index::{cronbach_alpha, harm_index, IndexSpec, IndexVariant, OutcomeMatrix, Window};
use triage_core::inference::{
    balance_f_test, itt, itt_spec, iv_wald, loo_predicted_harm, ols_cluster, permutation_test, prepare,
    targeting_tests, subgroup_targeting_scan, PermutationOptions, RegressionSpec, BALANCE_COVARIATES,
    TOP_QUARTILE_SCORE,
};
use triage_core::model::{simulate_assessments, var_prediction_error, verify_propositions, CheckStatus, ModelParams, expected_harm};
use triage_core::{cli, rng, stats};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance criterion {id:>2} {} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

/// Frame with randomization controls and the default harm index as `harm`.
fn harm_frame(records: &[triage_core::cohort::ChildRecord]) -> Frame {
    let mut f = Frame::from_records(records);
    f.add_randomization_controls().unwrap();
    let m = OutcomeMatrix::from_records(records, Window::Main).unwrap();
    f.insert("harm", harm_index(&m, &IndexSpec::default()).unwrap().values).unwrap();
    f
}

#[test]
fn criterion_01_error_variance_and_harm_closed_forms() {
    let start = Instant::now();
    let n = 1_000_000;
    let grid = [
        (0.5, 0.5, 1.5),
        (0.5, 1.0, 2.0),
        (0.5, 2.0, 4.0),
        (1.0, 0.5, 2.0),
        (1.0, 1.0, 4.0),
        (1.0, 2.0, 1.5),
        (2.0, 0.5, 4.0),
        (2.0, 1.0, 1.5),
        (2.0, 2.0, 2.0),
    ];
    let mut worst_z: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    let mut ok = true;
    for (i, &(var_r, var_eps_c, a)) in grid.iter().enumerate() {
        let p = ModelParams::single(var_r, var_eps_c, a);
        let s = simulate_assessments(&p, n, 100 + i as u64).unwrap();
        let batch = n / 100;
        let per: Vec<f64> = s.p.chunks(batch).map(stats::variance).collect();
        let v = stats::variance(&s.p);
        let se = stats::batch_mcse(&per);
        let cf = var_prediction_error(&p);
        let z = (v - cf).abs() / se;
        worst_z = worst_z.max(z);
        let rel = (stats::mean(&s.h) / expected_harm(cf) - 1.0).abs();
        worst_rel = worst_rel.max(rel);
        ok &= z < 3.0 && rel < 0.01;
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 30.0;
    report(
        1,
        "error variance and expected harm match closed forms",
        ok,
        &format!("9 grid points, worst |z|={worst_z:.2} (<3), worst harm rel err={worst_rel:.4} (<0.01), {secs:.1}s (<30s)"),
    );
}

#[test]
fn criterion_02_orderings_and_bias_sign_chain() {
    let n = 1_000_000;
    let p = ModelParams::default();
    assert_eq!((p.groups[0].var_r, p.groups[1].var_r, p.a), (2.0, 1.0, 2.0));
    let rep = verify_propositions(&p, n, 21).unwrap();
    let mut biased = p.clone();
    biased.groups[0] = biased.groups[0].clone().with_bias(1.0);
    let rep_b = verify_propositions(&biased, n, 22).unwrap();
    let mut detail = Vec::new();
    let mut ok = true;
    for id in ["1.1", "1.2", "2.1", "2.2"] {
        let c = rep.check(id).unwrap();
        let e = &c.estimates[0];
        detail.push(format!("{id}:{:?} z={:.1}", c.status, e.value / e.mcse));
        ok &= c.status == CheckStatus::Pass && -e.value > 3.0 * e.mcse;
    }
    let c3 = rep_b.check("3").unwrap();
    let mt = &c3.estimates[0];
    let gap = &c3.estimates[1];
    // 0 > E[p|T] > E[p|C]
    ok &= c3.status == CheckStatus::Pass && mt.value < -3.0 * mt.mcse && gap.value > 3.0 * gap.mcse;
    detail.push(format!("3:{:?} E[p|T]={:.4} gap={:.4}", c3.status, mt.value, gap.value));
    report(2, "model orderings hold with margin > 3 MCSE", ok, &detail.join(", "));
}

/// Brute-force CR1 regression by normal equations.
fn brute_ols(y: &[f64], x: &DMatrix<f64>, cl: &[usize]) -> (DVector<f64>, DVector<f64>) {
    let (n, k) = x.shape();
    let xtx_inv = (x.transpose() * x).try_inverse().unwrap();
    let b = &xtx_inv * x.transpose() * DVector::from_column_slice(y);
    let u = DVector::from_column_slice(y) - x * &b;
    let g = cl.iter().max().unwrap() + 1;
    let mut meat = DMatrix::zeros(k, k);
    for c in 0..g {
        let mut s = DVector::zeros(k);
        for i in (0..n).filter(|&i| cl[i] == c) {
            s += x.row(i).transpose() * u[i];
        }
        meat += &s * s.transpose();
    }
    let gf = g as f64;
    let scale = gf / (gf - 1.0) * (n as f64 - 1.0) / (n as f64 - k as f64);
    let v = &xtx_inv * meat * &xtx_inv * scale;
    (b, DVector::from_iterator(k, (0..k).map(|j| v[(j, j)].sqrt())))
}

#[test]
fn criterion_03_estimators_match_brute_force() {
    let mut worst_ols: f64 = 0.0;
    let mut worst_loo: f64 = 0.0;
    for inst in 0..100u64 {
        let mut r = rng::stream(3_000 + inst, 0);
        let n = r.random_range(20..=60usize);
        let p = r.random_range(1..=4usize);
        let g = r.random_range(5..=n / 2);
        let cl: Vec<usize> = (0..n).map(|i| if i < g { i } else { r.random_range(0..g) }).collect();
        let cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| r.sample(StandardNormal)).collect()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 0.5 + cols.iter().enumerate().map(|(j, c)| (j as f64 - 1.0) * c[i]).sum::<f64>() + r.sample::<f64, _>(StandardNormal))
            .collect();
        let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        let mut f = Frame::new(n)
            .with("y", y.clone())
            .unwrap()
            .with("cl", cl.iter().map(|&c| c as f64).collect())
            .unwrap();
        for (nm, c) in names.iter().zip(&cols) {
            f.insert(nm.clone(), c.clone()).unwrap();
        }
        let focal: Vec<&str> = names.iter().map(String::as_str).collect();
        let res = ols_cluster(&f, &RegressionSpec::new("y", &focal).cluster("cl")).unwrap();
        let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
        let (b, se) = brute_ols(&y, &x, &cl);
        for j in 0..=p {
            let t = &res.terms[j];
            worst_ols = worst_ols.max((t.estimate - b[j]).abs()).max((t.std_error - se[j]).abs());
        }
        // leave-one-out by refitting without each row
        let loo = loo_predicted_harm(&f, "y", &names, None).unwrap();
        for i in 0..n {
            let keep: Vec<usize> = (0..n).filter(|&a| a != i).collect();
            let xs = DMatrix::from_fn(n - 1, p + 1, |a, j| x[(keep[a], j)]);
            let ys = DVector::from_iterator(n - 1, keep.iter().map(|&a| y[a]));
            let bi = (xs.transpose() * &xs).try_inverse().unwrap() * xs.transpose() * ys;
            let pred = x.row(i).dot(&bi.transpose());
            worst_loo = worst_loo.max((loo.predictions[i] - pred).abs());
        }
    }
    report(
        3,
        "cluster OLS and leave-one-out match brute-force oracles",
        worst_ols < 1e-9 && worst_loo < 1e-9,
        &format!("100 instances, max |diff| ols={worst_ols:.2e}, loo={worst_loo:.2e} (<1e-9)"),
    );
}

#[test]
fn criterion_04_null_calibration() {
    let base = CohortConfig {
        effect_mode: EffectMode::None,
        ..CohortConfig::default()
    };
    let cal = calibrate(&base).unwrap();
    let seeds = 1000u64;
    let results: Vec<(f64, f64)> = (0..seeds)
        .map(|s| {
            let cfg = CohortConfig {
                seed: 40_000 + s,
                ..base.clone()
            };
            let recs = generate_with(&cfg, &cal).unwrap();
            let f = harm_frame(&recs);
            let perm = permutation_test(&f, &itt_spec(&f, "harm"), &PermutationOptions::new(199, s)).unwrap();
            let bal = balance_f_test(&f, &BALANCE_COVARIATES).unwrap();
            (perm.p_value, bal.joint.unwrap().p_value)
        })
        .collect();
    let perm_p: Vec<f64> = results.iter().map(|r| r.0).collect();
    let rate = |v: &[f64]| v.iter().filter(|&&p| p <= 0.05).count() as f64 / v.len() as f64;
    let perm_rate = rate(&perm_p);
    let bal_rate = rate(&results.iter().map(|r| r.1).collect::<Vec<_>>());
    let (ks_d, ks_p) = stats::ks_uniform(&perm_p);
    let ok = (perm_rate - 0.05).abs() <= 0.02 && (bal_rate - 0.05).abs() <= 0.02 && ks_p > 0.01;
    report(
        4,
        "null rejection rates and permutation p uniformity",
        ok,
        &format!("1000 seeds: permutation rejects {perm_rate:.3}, balance F rejects {bal_rate:.3} (0.05±0.02), KS D={ks_d:.4} p={ks_p:.3} (>0.01)"),
    );
}

#[test]
fn criterion_05_effect_recovery() {
    let start = Instant::now();
    let base = CohortConfig::default();
    assert_eq!(base.control_outcome_means, [0.660, 0.210, 0.168, 0.013, 0.020]);
    assert_eq!((base.treatment_share, base.screen_in_rate, base.first_stage, base.itt_effect_sd), (0.55, 0.30, 0.73, -0.061));
    let cal = calibrate(&base).unwrap();
    let mut covered = 0;
    let mut estimates = Vec::new();
    for s in 0..100u64 {
        let cfg = CohortConfig {
            seed: 50_000 + s,
            ..base.clone()
        };
        let recs = generate_with(&cfg, &cal).unwrap();
        let f = harm_frame(&recs);
        let r = itt(&f, "harm").unwrap();
        let t = r.term("treated").unwrap();
        let half = stats::t_quantile(0.975, (r.n_clusters - 1) as f64) * t.std_error;
        if (t.estimate - base.itt_effect_sd).abs() <= half {
            covered += 1;
        }
        estimates.push(t.estimate);
    }
    let secs = start.elapsed().as_secs_f64();
    let iv = iv_wald(-0.061, 0.73).unwrap();
    let ok = covered >= 93 && (iv - (-0.0836)).abs() <= 0.001 && (iv - (-0.083)).abs() <= 0.001 && secs < 120.0;
    report(
        5,
        "injected effect recovered",
        ok,
        &format!(
            "95% CI covers -0.061 in {covered}/100 (>=93), mean estimate {:.4}, IV {iv:.4} (-0.0836, reported -0.083), {secs:.1}s (<120s)",
            stats::mean(&estimates)
        ),
    );
}

#[test]
fn criterion_06_index_properties() {
    let cfg = CohortConfig::default();
    let recs = triage_core::cohort::generate_cohort(&cfg).unwrap();
    let m = OutcomeMatrix::from_records(&recs, Window::Main).unwrap();
    let h = harm_index(&m, &IndexSpec::default()).unwrap();
    let ctrl: Vec<f64> = h.values.iter().zip(&recs).filter(|(_, r)| !r.treated).map(|(v, _)| *v).collect();
    let (mean, var) = (stats::mean(&ctrl), stats::variance(&ctrl));
    let moments_ok = mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9;

    // rows closed under every column permutation give an exactly
    // exchangeable covariance
    let mut r = rng::stream(6, 0);
    let mut perms: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..5 {
        perms = perms
            .into_iter()
            .flat_map(|p| {
                (0..5).filter(|c| !p.contains(c)).map(|c| [p.clone(), vec![c]].concat()).collect::<Vec<_>>()
            })
            .collect();
    }
    let mut rows = Vec::new();
    for _ in 0..6 {
        let base: Vec<f64> = (0..5).map(|_| r.random_range(0..6) as f64).collect();
        for p in &perms {
            rows.push(p.iter().map(|&c| base[c]).collect::<Vec<f64>>());
        }
    }
    let ex = OutcomeMatrix::new(DMatrix::from_fn(rows.len(), 5, |i, j| rows[i][j]), vec![true; rows.len()]).unwrap();
    let eq = harm_index(&ex, &IndexSpec::new(IndexVariant::Equal)).unwrap();
    let ob = harm_index(&ex, &IndexSpec::new(IndexVariant::Obrien)).unwrap();
    let ob_diff = eq.values.iter().zip(&ob.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let alpha = cronbach_alpha(&m).unwrap();
    let pca = harm_index(&m, &IndexSpec::new(IndexVariant::Pca1)).unwrap();
    let ev = pca.eigenvalues.clone().unwrap();
    let ordered = ev.windows(2).all(|w| w[0] >= w[1]) && ev[0] > ev[1] && ev.iter().all(|&e| e > -1e-12);
    let ok = moments_ok && ob_diff < 1e-9 && (alpha - 0.81).abs() <= 0.05 && ordered;
    report(
        6,
        "harm index properties",
        ok,
        &format!(
            "control mean {mean:.1e} var-1 {:.1e}; obrien vs equal max diff {ob_diff:.1e}; cronbach alpha {alpha:.3} (0.81±0.05); pca1 eigenvalues {:?} ordered={ordered}",
            var - 1.0,
            ev.iter().map(|e| (e * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_07_counterfactual_bound_contract() {
    let grid = parse_grid("0:4:41").unwrap();
    let mut datasets: Vec<(DecisionData, f64)> = Vec::new();
    let base = CohortConfig::default();
    let cal = calibrate(&base).unwrap();
    for s in 0..10u64 {
        let recs = generate_with(&CohortConfig { seed: 70_000 + s, ..base.clone() }, &cal).unwrap();
        let d = prepare(&recs, &IndexSpec::default(), Window::Main).unwrap();
        datasets.push((DecisionData::from_frame(&d.frame).unwrap().arm(false), d.index.floor));
    }
    // synthetic data whose harm stays within 4 of the floor, so the floor binds
    for s in 0..10u64 {
        let mut r = rng::stream(7_000 + s, 0);
        let n = r.random_range(50..500usize);
        let harm: Vec<f64> = (0..n).map(|_| -0.3 + r.random::<f64>() * 3.9).collect();
        datasets.push((
            DecisionData {
                child_id: (0..n as u64).collect(),
                score: (0..n).map(|_| r.random_range(1..=20) as f64).collect(),
                screened_in: (0..n).map(|_| r.random::<f64>() < 0.3).collect(),
                treated: vec![false; n],
                harm,
                groups: vec![],
            },
            -0.3,
        ));
    }
    let (mut zero_ok, mut mono_ok, mut dom_ok, mut asym_ok) = (true, true, true, true);
    let mut binding = 0;
    let mut dom_fail = 0;
    for (s, (data, floor)) in datasets.iter().enumerate() {
        let rules = [DecisionRule::AlgoOnly { rate: 0.3 }, DecisionRule::Oracle { rate: 0.3 }];
        let c = bound_curves(data, &rules, &grid, *floor, s as u64).unwrap();
        let algo = c.regime("algo_only").unwrap();
        let oracle = c.regime("oracle").unwrap();
        zero_ok &= algo.mean_harm[0] == c.human_only_mean;
        mono_ok &= algo.mean_harm.windows(2).all(|w| w[1] <= w[0]);
        let d = apply_rule(data, &rules[0], s as u64).unwrap();
        let binds = (0..data.len()).filter(|&i| d[i] && !data.screened_in[i]).all(|i| data.harm[i] - 4.0 <= *floor);
        if binds {
            binding += 1;
            asym_ok &= (algo.mean_harm[40] - algo.asymptote).abs() <= 1e-9;
        }
        let dom = oracle.mean_harm.iter().zip(&algo.mean_harm).all(|(o, a)| *o <= *a + 1e-12);
        if !dom {
            dom_fail += 1;
        }
        dom_ok &= dom;
    }
    let ok = zero_ok && mono_ok && asym_ok && dom_ok && binding > 0;
    report(
        7,
        "counterfactual bound contract",
        ok,
        &format!(
            "{} datasets: R=0 equality {zero_ok}, monotone {mono_ok}, asymptote within 1e-9 on {binding} binding datasets {asym_ok}, oracle dominates on {}/{}",
            datasets.len(),
            datasets.len() - dom_fail,
            datasets.len()
        ),
    );
}

#[test]
fn criterion_08_mandate_arithmetic() {
    let n = 1000;
    // 60 children (6%) with score 20, 18 of them (30%) already screened in
    let score: Vec<f64> = (0..n).map(|i| if i < 60 { 20.0 } else { 1.0 + (i % 19) as f64 }).collect();
    let screened_in: Vec<bool> = (0..n).map(|i| if i < 60 { i < 18 } else { i % 3 == 0 }).collect();
    let data = DecisionData {
        child_id: (0..n as u64).collect(),
        score,
        screened_in: screened_in.clone(),
        treated: vec![false; n],
        harm: vec![0.0; n],
        groups: vec![],
    };
    let d = apply_rule(&data, &DecisionRule::Mandate { threshold: 20.0 }, 1).unwrap();
    let before = screened_in.iter().filter(|&&b| b).count();
    let after = d.iter().filter(|&&b| b).count();
    let expected = (0.06 * 0.70 * n as f64).round() as usize;
    let exact = after - before == expected && after - before == 42;
    let rise = (after - before) as f64 / n as f64;

    // the same identity on a generated cohort
    let recs = triage_core::cohort::generate_cohort(&CohortConfig::default()).unwrap();
    let f = prepare(&recs, &IndexSpec::default(), Window::Main).unwrap();
    let all = DecisionData::from_frame(&f.frame).unwrap();
    let g = apply_rule(&all, &DecisionRule::Mandate { threshold: 20.0 }, 1).unwrap();
    let gained = g.iter().zip(&all.screened_in).filter(|(a, b)| **a && !**b).count();
    let target = (0..all.len()).filter(|&i| all.score[i] == 20.0 && !all.screened_in[i]).count();
    let lost = g.iter().zip(&all.screened_in).filter(|(a, b)| !**a && **b).count();
    let ok = exact && gained == target && lost == 0;
    report(
        8,
        "mandate raises screen-in by the unscreened score-20 share",
        ok,
        &format!(
            "constructed: +{} of {n} = {rise} (0.06*0.70 = 42 children); generated cohort: +{gained} = unscreened score-20 count {target} ({:.4} of sample)",
            after - before,
            gained as f64 / all.len() as f64
        ),
    );
}

#[test]
fn criterion_09_targeting_mechanism() {
    let base = CohortConfig::default();
    assert_eq!(base.effect_mode, EffectMode::Reallocation);
    let cal = calibrate(&base).unwrap();
    let mut hits = 0;
    let (mut t1s, mut t4s) = (Vec::new(), Vec::new());
    let mut scan = None;
    for s in 0..100u64 {
        let recs = generate_with(&CohortConfig { seed: 90_000 + s, ..base.clone() }, &cal).unwrap();
        let d = prepare(&recs, &IndexSpec::default(), Window::Main).unwrap();
        let t = targeting_tests(&d.frame, TOP_QUARTILE_SCORE).unwrap();
        let t1 = t.screened_out_harm.coef("treated");
        let t4 = t.predicted_harm.coef("treated_x_screened_in");
        if t1 < 0.0 && t4 > 0.0 {
            hits += 1;
        }
        t1s.push(t1);
        t4s.push(t4);
        if s == 0 {
            scan = Some(subgroup_targeting_scan(&d.frame, 1000, 100, s).unwrap());
        }
    }
    let scan = scan.unwrap();
    let ok = hits >= 90 && scan.slope > 0.0 && scan.p_value < 0.01;
    report(
        9,
        "targeting sign pattern and subgroup scan",
        ok,
        &format!(
            "screened-out ITT < 0 and predicted-harm interaction > 0 in {hits}/100 (>=90); mean {:.3} / {:.3}; scan slope {:.3} p={:.1e}",
            stats::mean(&t1s),
            stats::mean(&t4s),
            scan.slope,
            scan.p_value
        ),
    );
}

#[test]
fn criterion_10_mvpf_classification() {
    let m = mvpf(20.0, 62_500.0, 280_000.0, 15_000.0, 2.0).unwrap();
    let ok = m.class == MvpfClass::Infinite && m.net_government_cost == -940_000.0 && m.savings == 1_250_000.0;
    report(
        10,
        "cost-benefit classification",
        ok,
        &format!("savings {} cost {} net {} class {:?}", m.savings, m.total_cost, m.net_government_cost, m.class),
    );
}

#[test]
fn criterion_11_replay_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).display().to_string();
    let cohort = p("gen/cohort.csv");
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("generate", vec!["generate".into(), "--seed".into(), "7".into(), "--out".into(), p("gen")]),
        ("model-verify", vec!["model-verify".into(), "--n-per-arm".into(), "20000".into(), "--out".into(), p("mv")]),
        (
            "analyze",
            vec!["analyze".into(), "--input".into(), cohort.clone(), "--table".into(), "all".into(), "--n-perm".into(), "99".into(), "--out".into(), p("an")],
        ),
        ("counterfactual", vec!["counterfactual".into(), "--input".into(), cohort.clone(), "--out".into(), p("cf")]),
        (
            "report",
            vec!["report".into(), "--input".into(), p("an"), "--input".into(), p("cf"), "--input".into(), p("mv"), "--out".into(), p("rep")],
        ),
    ];
    let dirs = ["gen", "mv", "an", "cf", "rep"];
    let mut detail = Vec::new();
    let mut ok = true;
    for ((name, args), d) in runs.iter().zip(dirs) {
        let code = cli::run(std::iter::once("triage".to_string()).chain(args.iter().cloned()));
        let manifest = format!("{}/manifest_{name}.json", p(d));
        // replay into the original directory and into a fresh one
        let same = cli::run(["triage", "--from-manifest", &manifest]);
        let fresh = cli::run(["triage", "--from-manifest", &manifest, "--out", &p(&format!("replay_{d}"))]);
        let m = cli::RunManifest::load(std::path::Path::new(&manifest)).unwrap();
        ok &= code == 0 && same == 0 && fresh == 0 && !m.outputs.is_empty();
        detail.push(format!("{name}: run={code} replay={same}/{fresh} outputs={}", m.outputs.len()));
    }
    report(11, "every subcommand replays from its manifest", ok, &detail.join("; "));
}
