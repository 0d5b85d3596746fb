//! Gain tuning against a live spring surface.

use vicopt_core::dynamics::{GainBounds, GainInput, PlantState, Vec6};
use vicopt_core::environment::{ContactSurface, DisturbanceProfile, Environment, PenetrationSign};
use vicopt_core::objective::{rollout_cost, CostKind, ForceSource, RolloutConfig};
use vicopt_core::optimizer::SqpOptions;
use vicopt_core::runtime::optimize_axes;

#[test]
fn one_axis_contact_cost_descends() {
    // Start at e = 1 and fall toward a stiff surface at e = 0.4.
    let surface = ContactSurface::new(0, 0.4, 5e3, 0.0, PenetrationSign::Negative).unwrap();
    let env = Environment::new(vec![surface], DisturbanceProfile::none());
    let mut e = Vec6::zeros();
    e[0] = 1.0;
    let init = PlantState::new(e, Vec6::zeros(), 0.0);
    let cfg = RolloutConfig::new(3.0, 1.0 / 125.0, CostKind::Fitave).with_substeps(8);
    let source = ForceSource::live(&env);
    let bounds = GainBounds::from_blocks((1.0, 40.0), (1.0, 100.0), (0.2, 2.0)).unwrap();
    let u0 = GainInput::uniform(3.0, 60.0, 1.0).unwrap();

    let cost = |u: &GainInput| rollout_cost(u, &init, &source, &cfg);
    let start = cost(&u0);
    let (u, rep) = optimize_axes(cost, u0.as_vector(), &[0], &bounds, &SqpOptions::default()).unwrap();
    assert!(start.is_finite());
    assert!(rep.objective <= start, "{} > {start}", rep.objective);
    assert!(rep.objective < 0.9 * start, "little progress: {start} -> {}", rep.objective);
    assert!(bounds.contains(&u));
    assert_eq!(cost(&GainInput::new(u).unwrap()), rep.objective);
    // Untouched axes keep their gains.
    for i in 1..6 {
        assert_eq!(u[i], u0.as_vector()[i]);
    }
}
