use survmtl::datagen::{cohort_split, generate_cohort, read_jsonl, write_jsonl, CohortRecord, GeneratorConfig, Split};
use survmtl::model::Lab;

fn cohort(seed: u64, n_cases: usize, n_controls: usize, rho: f64) -> (GeneratorConfig, Vec<CohortRecord>) {
    let cfg = GeneratorConfig {
        seed,
        n_cases,
        n_controls,
        confound_strength: rho,
        ..Default::default()
    };
    let c = generate_cohort(&cfg).unwrap();
    (cfg, c)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn window_mean(w: &[Vec<f64>], dim: usize) -> f64 {
    w.iter().map(|x| x[dim]).sum::<f64>() / w.len() as f64
}

#[test]
fn case_drift_grows_toward_the_event() {
    let (_, c) = cohort(0, 100, 10, 0.5);
    let cases: Vec<&CohortRecord> = c.iter().filter(|r| r.is_case).collect();
    let at = |lead| {
        cases
            .iter()
            .map(|r| window_mean(r.latent_window(lead).unwrap().unwrap(), 0))
            .sum::<f64>()
            / cases.len() as f64
    };
    assert!(at(1) > at(24) + 1.0, "{} vs {}", at(1), at(24));
}

#[test]
fn split_is_disjoint_stratified_and_covers_the_cohort() {
    let (cfg, c) = cohort(2, 200, 1000, 0.5);
    let Split { train, test } = cohort_split(&cfg, &c).unwrap();
    let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..c.len()).collect::<Vec<_>>());
    let cases = |ix: &[usize]| ix.iter().filter(|&&i| c[i].is_case).count();
    assert_eq!((cases(&train), train.len() - cases(&train)), (160, 800));
    assert_eq!((cases(&test), test.len() - cases(&test)), (40, 200));
}

#[test]
fn unconfounded_clusters_are_uncorrelated_with_labels() {
    for seed in 0..5 {
        let (_, c) = cohort(seed, 200, 1000, 0.0);
        // indicator of the clusters that confounding would give to cases
        let low: Vec<f64> = c.iter().map(|r| f64::from(u8::from(r.identity_cluster < 2))).collect();
        let y: Vec<f64> = c.iter().map(|r| f64::from(u8::from(r.is_case))).collect();
        let r = pearson(&low, &y);
        assert!(r.abs() < 0.1, "seed {seed}: r = {r}");
    }
}

#[test]
fn confounding_applies_to_training_identities_only() {
    let (cfg, c) = cohort(4, 200, 1000, 1.0);
    let split = cohort_split(&cfg, &c).unwrap();
    let agree = |ix: &[usize]| {
        ix.iter()
            .filter(|&&i| (c[i].identity_cluster < 2) == c[i].is_case)
            .count() as f64
            / ix.len() as f64
    };
    assert_eq!(agree(&split.train), 1.0);
    assert!((agree(&split.test) - 0.5).abs() < 0.1, "{}", agree(&split.test));
}

#[test]
fn same_seed_serializes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = cohort(9, 5, 5, 0.5);
    let (_, b) = cohort(9, 5, 5, 0.5);
    let (pa, pb) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    write_jsonl(&pa, &a).unwrap();
    write_jsonl(&pb, &b).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    assert_eq!(read_jsonl(&pa).unwrap(), a);
}

#[test]
fn teachers_vary_and_differ() {
    let (_, c) = cohort(1, 20, 20, 0.5);
    let mut series = Vec::new();
    for lab in Lab::ALL {
        let v: Vec<f64> = c.iter().flat_map(|r| r.labs.get(lab).to_vec()).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(var > 1e-6, "{lab:?} variance {var}");
        series.push(v);
    }
    for i in 0..4 {
        for j in i + 1..4 {
            assert!(pearson(&series[i], &series[j]).abs() < 0.999);
        }
    }
}
