use std::sync::Arc;

use proptest::prelude::*;
use symcrit::symmetrize::{plan, reflection_polarizers, schwarz};
use symcrit::*;

fn square() -> (Arc<Domain>, Arc<SymmetryGroup>) {
    let d = build_domain(&DomainSpec::square(4.0, 7)).unwrap();
    let g = build_group(&d, GroupLabel::Dihedral, 4).unwrap();
    (d, g)
}

fn disk() -> (Arc<Domain>, Arc<SymmetryGroup>) {
    let d = build_domain(&DomainSpec::disk(3.0, 5, 12).with_max_rotation_order(6)).unwrap();
    let g = build_group(&d, GroupLabel::Dihedral, 6).unwrap();
    (d, g)
}

fn field(d: &Arc<Domain>, raw: &[f64]) -> GridFunction {
    let v: Vec<f64> = (0..d.len()).map(|i| raw[i % raw.len()]).collect();
    GridFunction::from_values_masked(d, v)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn averaging_is_an_invariant_projection(raw in prop::collection::vec(-3.0f64..3.0, 97), which in 0usize..2) {
        let (d, g) = if which == 0 { square() } else { disk() };
        let u = field(&d, &raw);
        let au = g.average_values(u.values());
        prop_assert!(max_diff(&g.average_values(&au), &au) <= 1e-13);
        for k in 0..g.order() {
            let gu = g.act_values(k, u.values());
            prop_assert!(max_diff(&g.average_values(&gu), &au) <= 1e-13);
        }
        for p in [1.5, 2.0, 3.0] {
            prop_assert!(d.lm_norm(&au, p) <= d.lm_norm(u.values(), p) + 1e-12);
        }
    }

    #[test]
    fn energy_is_group_invariant(raw in prop::collection::vec(-2.0f64..2.0, 97), modulated in any::<bool>()) {
        let (d, g) = square();
        let j: Arc<dyn Integrand> = if modulated {
            Arc::new(Modulated::new(1.8).unwrap())
        } else {
            Arc::new(PLaplace::new(1.8).unwrap())
        };
        let m = EnergyModel::new(&d, j, 3.0, Some(g.clone()), false).unwrap();
        let u = field(&d, &raw);
        let f = m.energy_values(u.values());
        for k in 0..g.order() {
            let fg = m.energy_values(&g.act_values(k, u.values()));
            prop_assert!((fg - f).abs() <= 1e-12 * (1.0 + f.abs()));
        }
    }

    #[test]
    fn polarization_contracts_and_is_idempotent(a in prop::collection::vec(-2.0f64..2.0, 97), b in prop::collection::vec(-2.0f64..2.0, 97)) {
        let (d, _) = square();
        let (u, v) = (field(&d, &a), field(&d, &b));
        for h in reflection_polarizers(&d).unwrap() {
            let (uh, vh) = (h.apply(&u).unwrap(), h.apply(&v).unwrap());
            prop_assert_eq!(h.apply(&uh).unwrap(), uh.clone());
            let diff: Vec<f64> = u.values().iter().zip(v.values()).map(|(x, y)| x - y).collect();
            let diff_h: Vec<f64> = uh.values().iter().zip(vh.values()).map(|(x, y)| x - y).collect();
            for p in [1.0, 2.0, 4.0] {
                prop_assert!(d.lm_norm(&diff_h, p) <= d.lm_norm(&diff, p) + 1e-12);
            }
        }
    }

    #[test]
    fn plan_reproduces_schwarz(raw in prop::collection::vec(-2.0f64..2.0, 97), which in 0usize..2) {
        let (d, _) = if which == 0 { square() } else { disk() };
        let u = field(&d, &raw);
        let pl = plan(&d).unwrap();
        let star = schwarz(&u).unwrap();
        prop_assert_eq!(pl.apply(&u), star.clone());
        prop_assert_eq!(schwarz(&star).unwrap(), star);
    }

    #[test]
    fn gridfunction_csv_round_trip(raw in prop::collection::vec(-1e3f64..1e3, 97)) {
        let (d, _) = disk();
        let u = field(&d, &raw);
        let mut buf = Vec::new();
        u.write_csv(&mut buf, &["sample".to_string()]).unwrap();
        let back = GridFunction::read_csv(&d, buf.as_slice()).unwrap();
        prop_assert_eq!(back, u);
    }
}
