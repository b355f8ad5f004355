use std::path::PathBuf;

use adaptmt::model::TermPair;
use adaptmt::terminology::{count_usage, cross_average, usage_report, TermMatchMode, TermUsageReport, UsageRow};
use serde::Deserialize;

const TOL: f64 = 1e-9;

#[derive(Deserialize)]
struct Table {
    pairs: Vec<PairTable>,
    cross_avg_pct: std::collections::BTreeMap<String, f64>,
}

#[derive(Deserialize)]
struct PairTable {
    pair: String,
    rows: Vec<UsageRow>,
    avg_pct: std::collections::BTreeMap<String, f64>,
}

fn load(name: &str) -> Table {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/terms")
        .join(name);
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Exact non-negative fraction.
#[derive(Clone, Copy)]
struct Frac(u128, u128);

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Frac {
    fn add(self, o: Frac) -> Frac {
        let n = self.0 * o.1 + o.0 * self.1;
        let d = self.1 * o.1;
        let g = gcd(n, d);
        Frac(n / g, d / g)
    }

    fn div(self, k: u128) -> Frac {
        let g = gcd(self.0, self.1 * k);
        Frac(self.0 / g, self.1 * k / g)
    }

    /// Half-up at two decimals of a percentage, as hundredths.
    fn pct_hundredths(self) -> u128 {
        let n = self.0 * 10_000;
        (2 * n + self.1) / (2 * self.1)
    }
}

fn exact_mean(rows: &[UsageRow], system: &str) -> Frac {
    let sel: Vec<&UsageRow> = rows.iter().filter(|r| r.system == system).collect();
    sel.iter()
        .fold(Frac(0, 1), |acc, r| acc.add(Frac(r.used as u128, r.total as u128)))
        .div(sel.len() as u128)
}

fn check_table(name: &str) {
    let table = load(name);
    let mut reports: Vec<TermUsageReport> = Vec::new();
    let mut means: std::collections::BTreeMap<String, Frac> = Default::default();
    for pt in &table.pairs {
        let report = usage_report(pt.rows.clone()).unwrap();
        for (system, want) in &pt.avg_pct {
            let oracle = exact_mean(&pt.rows, system);
            let got = report.avg_pct(system).unwrap();
            assert!(
                (got * 100.0 - oracle.pct_hundredths() as f64).abs() < 1e-6,
                "{}/{system}",
                pt.pair
            );
            assert!((got - want).abs() < TOL, "{} {system}: {got} vs {want}", pt.pair);
            let e = means.entry(system.clone()).or_insert(Frac(0, 1));
            *e = e.add(oracle);
        }
        reports.push(report);
    }
    let refs: Vec<&TermUsageReport> = reports.iter().collect();
    for (system, want) in &table.cross_avg_pct {
        let oracle = means[system].div(table.pairs.len() as u128).pct_hundredths() as f64 / 100.0;
        let got = cross_average(&refs, system).unwrap();
        assert!((got - oracle).abs() < TOL, "{system}: {got} vs oracle {oracle}");
        assert!((got - want).abs() < TOL, "{system}: {got} vs {want}");
    }
}

#[test]
fn test_set_table() {
    check_table("test_used_terms.json");
}

#[test]
fn blind_set_table() {
    check_table("blind_used_terms.json");
}

#[test]
fn de_en_rows_file() {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/de_en_test.json");
    let rows: Vec<UsageRow> = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
    let report = usage_report(rows).unwrap();
    assert_eq!(report.avg_pct("Baseline"), Some(60.18));
}

#[test]
fn counts_from_translations() {
    let set = vec![
        TermPair::new("Vertrag", "contract").unwrap(),
        TermPair::new("Kündigung", "termination").unwrap(),
    ];
    let items: Vec<(&str, &[TermPair])> = vec![
        ("The contract ends on termination.", &set),
        ("The agreement ends.", &set),
        ("Contract terminated.", &set[..1]),
    ];
    let c = count_usage(items, TermMatchMode::Auto, None);
    assert_eq!((c.used, c.total), (3, 5));
}
