use procalc_eval::gold::{bundled_cases, check_gold, run_gold, GoldProblem, Verdict};

fn case(id: &str) -> GoldProblem {
    bundled_cases().into_iter().find(|c| c.problem.id == id).unwrap().problem
}

/// Ideal-gas volume of 88 lb CO2 at 15 °C and 32.2 ft of water, in ft³,
/// from SI constants.
fn gas_law_oracle() -> f64 {
    let n = 88.0 * 453.59237 / 44.01; // mol
    let p = 32.2 * 0.433 * 6894.757; // ft H2O → psi → Pa
    let v = n * 8.314462618 * 288.15 / p; // m³
    v / 0.028316846592
}

#[test]
fn bundled_cases_all_pass() {
    let r = run_gold(&bundled_cases());
    assert!(r.all_pass(), "{r:#?}");
    assert_eq!(r.total, 6);
}

#[test]
fn worked_answers_at_one_percent() {
    let evap = case("evaporator_heat_load");
    assert_eq!(check_gold(&evap, "the heat load comes to 33900 kW").verdict, Verdict::Pass);
    let econ = case("evaporator_steam_economy");
    assert_eq!(check_gold(&econ, "and the steam economy is 1.0").verdict, Verdict::Pass);
    let bio = case("biosynthesis_co2_left");
    assert_eq!(check_gold(&bio, "0.784 g").verdict, Verdict::Pass);
    // |0.78 - 0.784| / 0.784 = 0.51 %
    assert_eq!(check_gold(&bio, "about 0.78 g remain").verdict, Verdict::Pass);
    assert_eq!(check_gold(&bio, "about 0.77 g remain").verdict, Verdict::Fail);
    let dryer = case("dryer_dry_air_rate");
    assert_eq!(check_gold(&dryer, "approximately 1021.33 kg/hr").verdict, Verdict::Pass);
    assert_eq!(check_gold(&dryer, "no figure given").verdict, Verdict::NoNumber);
}

#[test]
fn gas_law_against_recomputed_oracle() {
    let gas = case("gas_law_co2_volume");
    let oracle = gas_law_oracle();
    assert!((gas.gold_value - oracle).abs() / oracle < 1e-4, "fixture {} vs oracle {oracle}", gas.gold_value);
    assert_eq!(check_gold(&gas, &format!("V = {oracle:.1} ft3")).verdict, Verdict::Pass);
    // the source's printed figure is about 4 % low and must not pass
    assert_eq!(check_gold(&gas, "approximately 765.8 ft³").verdict, Verdict::Fail);
    let r = run_gold(&bundled_cases());
    let flagged: Vec<&str> = r.discrepant().iter().map(|row| row.id.as_str()).collect();
    assert_eq!(flagged, ["gas_law_co2_volume"]);
    assert_eq!(r.rows.iter().find(|x| x.id == "gas_law_co2_volume").unwrap().stated_value, Some(765.8));
}

#[test]
fn cstr_value_matches_analytic_solution() {
    // c(t) = c_i (1 - exp(-q t / V)) with V = 2, q = 0.4, c_i = 50, t = 50
    let analytic = 50.0 * (1.0 - (-0.4f64 * 50.0 / 2.0).exp());
    let p = case("cstr_outlet_concentration");
    assert!((p.gold_value - analytic).abs() < 1e-3);
    // the 25-minute value shares the unit but not the anchor
    assert_eq!(check_gold(&p, "c(25 min) = 49.663 kg/m3").verdict, Verdict::NoNumber);
    assert_eq!(check_gold(&p, "c(50 min) = 49.663 kg/m3").verdict, Verdict::Fail);
}
