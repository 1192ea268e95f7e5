use hydrozone::engine::{
    ideal_load, integrate_step, simulate, EngineConfig, HeatingPeriod, SimError, SimInputs, Simulator, StepBoundary,
};
use hydrozone::hydronic::{compile_hifi, HydronicDefaults, HydronicParams, LoopInputs};
use hydrozone::series::UniformGrid;
use hydrozone::synthetic::{add_floor_loops, analytic_box, row_building, Constructions};
use hydrozone::thermal::{
    compile_lofi, Branch, BranchKind, Conductance, DiscretizationPolicy, Node, NodeRole, PhysicsConfig, Terminal,
    ThermalModel, ZoneNode,
};
use hydrozone::weather::{Site, WeatherSeries};

fn always() -> EngineConfig {
    EngineConfig {
        heating: HeatingPeriod::Always,
        ..EngineConfig::lofi()
    }
}

fn still_air() -> PhysicsConfig {
    PhysicsConfig {
        ach: 0.0,
        ..PhysicsConfig::default()
    }
}

#[test]
fn analytic_box_reaches_steady_load() {
    let physics = still_air();
    let model = compile_lofi(&analytic_box(100.0, 21.0, &physics), &DiscretizationPolicy::default(), &physics).unwrap();
    let weather = WeatherSeries::constant(0.0, 3.0 * 86_400.0, 1.0, 0.0);
    let inputs = SimInputs::default();
    let r = simulate(&model, &weather, &inputs, 0.0, 2.0 * 86_400.0, &always()).unwrap();
    let q = *r.q_heat[0].last().unwrap();
    assert!((q - 2000.0).abs() < 20.0, "{q}");
    for &t in &r.t_zone[0] {
        assert!((t - 21.0).abs() < 0.01);
    }
}

#[test]
fn equal_temperatures_need_no_heat() {
    let physics = PhysicsConfig::default();
    let model = compile_lofi(&row_building(4, &Constructions::opaque()), &DiscretizationPolicy::default(), &physics)
        .unwrap();
    let mut physics_ground = model.clone();
    physics_ground.physics.ground_temperature = 21.0;
    let weather = WeatherSeries::constant(0.0, 86_400.0, 21.0, 3.0);
    let inputs = SimInputs::default();
    let r = simulate(&physics_ground, &weather, &inputs, 0.0, 86_400.0, &always()).unwrap();
    assert!(r.q_heat.iter().flatten().all(|&q| q.abs() < 1e-6));
    assert!(r.t_zone.iter().flatten().all(|&t| (t - 21.0).abs() < 1e-9));
}

#[test]
fn warm_weather_needs_no_heat() {
    let physics = still_air();
    let model = compile_lofi(&analytic_box(100.0, 21.0, &physics), &DiscretizationPolicy::default(), &physics).unwrap();
    let weather = WeatherSeries::constant(0.0, 86_400.0, 25.0, 0.0);
    let inputs = SimInputs::default();
    let r = simulate(&model, &weather, &inputs, 0.0, 86_400.0, &always()).unwrap();
    assert!(r.q_heat[0].iter().all(|&q| q == 0.0));
}

fn single_node(c: f64, ua: f64) -> ThermalModel {
    ThermalModel {
        nodes: vec![Node {
            role: NodeRole::ZoneAir { zone: 101 },
            capacity: c,
        }],
        branches: vec![Branch {
            a: 0,
            b: Terminal::Ambient,
            g: Conductance::Fixed(ua),
            kind: BranchKind::Infiltration,
        }],
        zones: vec![ZoneNode {
            id: 101,
            node: 0,
            setpoint: 21.0,
            volume: 1.0,
        }],
        zone_index: [(101, 0)].into(),
        chains: Vec::new(),
        solar: Vec::new(),
        physics: PhysicsConfig::default(),
        azi_s: 0.0,
    }
}

#[test]
fn implicit_step_matches_closed_form() {
    let (c, ua, dt, t0, tb) = (5.0e5, 80.0, 600.0, 18.0, -3.0);
    let model = single_node(c, ua);
    let bc = StepBoundary {
        t_amb: tb,
        wind: 0.0,
        sources: Vec::new(),
    };
    let next = integrate_step(&model, &[t0], &bc, dt).unwrap()[0];
    let expect = tb + (t0 - tb) / (1.0 + ua * dt / c);
    assert!((next - expect).abs() < 1e-12, "{next} vs {expect}");

    // Small steps approach the explicit derivative.
    let h = 1e-3;
    let small = integrate_step(&model, &[t0], &bc, h).unwrap()[0];
    let slope = ua * (tb - t0) / c;
    assert!(((small - t0) / h - slope).abs() < 1e-6 * slope.abs());

    // Steady state is a fixed point.
    let steady = integrate_step(&model, &[tb], &bc, dt).unwrap()[0];
    assert_eq!(steady, tb);
}

#[test]
fn missing_weather_is_a_gap() {
    let physics = still_air();
    let model = compile_lofi(&analytic_box(100.0, 21.0, &physics), &DiscretizationPolicy::default(), &physics).unwrap();
    let weather = WeatherSeries::constant(0.0, 86_400.0, 1.0, 0.0);
    let inputs = SimInputs::default();
    let err = simulate(&model, &weather, &inputs, 0.0, 2.0 * 86_400.0, &always()).unwrap_err();
    assert!(matches!(err, SimError::InputGap { .. }));
}

#[test]
fn hifi_prescribed_flow_runs_and_conserves_energy() {
    let mut topo = row_building(2, &Constructions::default());
    add_floor_loops(&mut topo, 0);
    let params = HydronicParams::uniform(0.15, 6.0, &topo.loop_ids());
    let model = compile_hifi(
        &topo,
        &DiscretizationPolicy::default(),
        &PhysicsConfig::default(),
        &HydronicDefaults::default(),
        &params,
    )
    .unwrap();
    let weather = WeatherSeries::from_fn(
        UniformGrid {
            start: 0.0,
            step: 3600.0,
            len: 49,
        },
        &Site::default(),
        |t| (2.0 + 4.0 * (t / 86_400.0 * std::f64::consts::TAU).sin(), 3.0, 300.0, 80.0),
    );
    let grid = UniformGrid {
        start: 0.0,
        step: 60.0,
        len: 2 * 1440 + 1,
    };
    let mut inputs = SimInputs::default();
    inputs.loops = LoopInputs {
        grid: Some(grid),
        supply: [(1, vec![35.0; grid.len]), (2, vec![33.0; grid.len])].into(),
        flow: [
            (1, (0..grid.len).map(|i| if (i / 30) % 2 == 0 { 0.05 } else { 0.0 }).collect()),
            (2, vec![0.03; grid.len]),
        ]
        .into(),
    };
    let r = simulate(&model, &weather, &inputs, 0.0, 86_400.0, &EngineConfig::hifi()).unwrap();
    assert_eq!(r.times.len(), 2881);
    assert!(r.ledger.relative_residual() < 1e-9, "{:?}", r.ledger);
    let tr = r.return_temperature(2).unwrap();
    assert!(tr.iter().skip(10).all(|&t| t < 33.0 && t > 15.0));
}

#[test]
fn loop_energy_balance_closes() {
    let mut topo = row_building(1, &Constructions::default());
    add_floor_loops(&mut topo, 0);
    let params = HydronicParams::uniform(0.15, 6.0, &[1]);
    let model = compile_hifi(
        &topo,
        &DiscretizationPolicy::default(),
        &PhysicsConfig::default(),
        &HydronicDefaults::default(),
        &params,
    )
    .unwrap();
    let weather = WeatherSeries::constant(0.0, 86_400.0, 0.0, 2.0);
    let mut inputs = SimInputs::default();
    let grid = UniformGrid {
        start: 0.0,
        step: 600.0,
        len: 145,
    };
    inputs.loops = LoopInputs {
        grid: Some(grid),
        supply: [(1, vec![35.0; grid.len])].into(),
        flow: [(1, vec![0.05; grid.len])].into(),
    };
    let mut sim = Simulator::new(&model, &weather, &inputs, &EngineConfig::hifi(), 0.0).unwrap();
    let base = &model.base;
    let lp = &model.loops[0];
    let chain = base.chain(101, hydrozone::topology::Orientation::Down).unwrap();
    // Control volume: water plus the whole floor construction.
    let mut cv: Vec<usize> = lp.volumes().collect();
    cv.extend(&chain.nodes);
    let energy = |s: &[f64]| cv.iter().map(|&i| base.nodes[i].capacity * s[i]).sum::<f64>();
    let e0 = energy(sim.state());
    let (mut supplied, mut out) = (0.0, 0.0);
    for _ in 0..(6 * 3600 / 5) {
        sim.step().unwrap();
        let s = sim.state();
        let g = sim.conductances();
        supplied += 0.05 * hydrozone::hydronic::CP_WATER * (35.0 - s[lp.return_node()]) * sim.dt();
        for (k, br) in base.branches.iter().enumerate() {
            let inside = cv.contains(&br.a);
            let (tb, b_inside) = match br.b {
                Terminal::Node(j) => (s[j], cv.contains(&j)),
                Terminal::Ground => (base.physics.ground_temperature, false),
                Terminal::Ambient => (0.0, false),
            };
            if inside && !b_inside {
                out += g[k] * (s[br.a] - tb) * sim.dt();
            } else if !inside && b_inside {
                out -= g[k] * (s[br.a] - tb) * sim.dt();
            }
        }
    }
    let stored = energy(sim.state()) - e0;
    let resid = supplied - stored - out;
    assert!(resid.abs() < 0.005 * supplied.abs(), "resid {resid}, supplied {supplied}");
}

#[test]
fn ideal_load_is_clipped_at_capacity() {
    let mut physics = still_air();
    physics.q_max = Some(500.0);
    let model = compile_lofi(&analytic_box(100.0, 21.0, &physics), &DiscretizationPolicy::default(), &physics).unwrap();
    let weather = WeatherSeries::constant(0.0, 86_400.0, 1.0, 0.0);
    let state = vec![21.0; model.n_nodes()];
    let q = ideal_load(&model, &weather, &state, 0.0, 300.0).unwrap();
    assert_eq!(q, vec![500.0]);
    let mut open = model.clone();
    open.physics.q_max = None;
    let q = ideal_load(&open, &weather, &state, 0.0, 300.0).unwrap();
    assert!(q[0] > 500.0);
}
