use sig_lqc::experiment::{
    prepare, solve_truncated, DriverSpec, ExperimentConfig, Problem, SignatureSource,
};
use sig_lqc::model::{CostSpec, LqModel};
use sig_lqc::signature::SampledPath;
use sig_lqc::simulation::{
    estimate_against_reference, estimate_cost, simulate_state, DriverConfig, DriverKind,
    GeneratedPaths, PathGenerator, PathSet, Scheme, SignatureControl,
};
use sig_lqc::Workers;

fn brownian_config(n_paths: usize, steps: usize) -> ExperimentConfig {
    ExperimentConfig {
        problem: Some(Problem {
            model: LqModel::scalar(10.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
            cost: CostSpec {
                b: vec![vec![vec![1.0]]],
                e: vec![vec![1.0]],
                ..Default::default()
            },
        }),
        problem_file: None,
        driver: DriverSpec {
            kind: DriverKind::Brownian,
            hurst: 0.5,
            steps,
        },
        l_values: vec![4],
        m_values: vec![2],
        n_paths,
        expected_signature: SignatureSource::Fawcett,
        output_dir: "unused".into(),
        seed: 99,
        record_wall_time: false,
        dump_quadratic: false,
    }
}

#[test]
fn controls_ignore_the_future() {
    let cfg = brownian_config(10, 100);
    let (prep, _) = prepare(&cfg, Workers(1)).unwrap();
    let control = SignatureControl(solve_truncated(&prep, 3, 2, Workers(1)).unwrap().control);
    let model = &prep.problem.model;
    let a = prep.generator.path(0);
    let b = prep.generator.path(1);
    let cut = 40;
    let mut values = Vec::new();
    for i in 0..a.len() {
        let src = if i <= cut {
            a.value(i)[0]
        } else {
            a.value(cut)[0] + b.value(i)[0] - b.value(cut)[0]
        };
        values.push(src);
    }
    let spliced = SampledPath::new(a.times().to_vec(), values, 1).unwrap();
    let ta = simulate_state(model, &control, &a, Scheme::ItoEuler).unwrap();
    let tb = simulate_state(model, &control, &spliced, Scheme::ItoEuler).unwrap();
    for i in 0..=cut {
        assert_eq!(ta.control(i), tb.control(i));
        assert_eq!(ta.state(i), tb.state(i));
    }
    assert_ne!(ta.control(cut + 2), tb.control(cut + 2));
}

#[test]
fn estimates_do_not_depend_on_worker_count() {
    let cfg = brownian_config(300, 200);
    let (prep, _) = prepare(&cfg, Workers(1)).unwrap();
    let control = SignatureControl(solve_truncated(&prep, 3, 1, Workers(1)).unwrap().control);
    let paths = GeneratedPaths {
        generator: &prep.generator,
        count: 300,
    };
    let Problem { model, cost } = &prep.problem;
    let reference = prep
        .riccati
        .as_ref()
        .map(|r| r as &dyn sig_lqc::simulation::Control);
    let run = |w| {
        estimate_against_reference(
            model,
            cost,
            &control,
            reference,
            &paths,
            Scheme::ItoEuler,
            Workers(w),
        )
        .unwrap()
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(0));
}

#[test]
fn riccati_feedback_is_cheapest() {
    let cfg = brownian_config(2000, 500);
    let (prep, _) = prepare(&cfg, Workers(0)).unwrap();
    let riccati = prep.riccati.as_ref().unwrap();
    let paths = GeneratedPaths {
        generator: &prep.generator,
        count: 2000,
    };
    let Problem { model, cost } = &prep.problem;
    for (l, m) in [(2, 0), (3, 1), (4, 2)] {
        let control = SignatureControl(solve_truncated(&prep, l, m, Workers(0)).unwrap().control);
        let est = estimate_against_reference(
            model,
            cost,
            &control,
            Some(riccati),
            &paths,
            Scheme::ItoEuler,
            Workers(0),
        )
        .unwrap();
        let bench = est.reference_cost.unwrap();
        assert!(
            bench.mean <= est.cost.mean + 2.0 * est.cost.stderr,
            "L={l} M={m}: benchmark {} vs {} ± {}",
            bench.mean,
            est.cost.mean,
            est.cost.stderr
        );
    }
}

/// Paths of a generator with every `factor` consecutive increments merged.
struct Coarsened<'a> {
    generator: &'a PathGenerator,
    count: usize,
    factor: usize,
}

impl PathSet for Coarsened<'_> {
    fn len(&self) -> usize {
        self.count
    }

    fn path(&self, index: usize) -> SampledPath {
        let fine = self.generator.path(index as u64);
        let keep: Vec<usize> = (0..fine.len()).step_by(self.factor).collect();
        let times = keep.iter().map(|&i| fine.times()[i]).collect();
        let values = keep.iter().map(|&i| fine.value(i)[0]).collect();
        SampledPath::new(times, values, 1).unwrap()
    }
}

#[test]
fn halving_the_step_barely_moves_the_cost() {
    let cfg = brownian_config(2000, 1000);
    let (prep, _) = prepare(&cfg, Workers(0)).unwrap();
    let control = SignatureControl(solve_truncated(&prep, 4, 2, Workers(0)).unwrap().control);
    let Problem { model, cost } = &prep.problem;
    let fine = GeneratedPaths {
        generator: &prep.generator,
        count: 2000,
    };
    let coarse = Coarsened {
        generator: &prep.generator,
        count: 2000,
        factor: 2,
    };
    let a = estimate_cost(model, cost, &control, &fine, Scheme::ItoEuler, Workers(0)).unwrap();
    let b = estimate_cost(model, cost, &control, &coarse, Scheme::ItoEuler, Workers(0)).unwrap();
    assert!(
        (a.mean - b.mean).abs() < 0.01 * a.mean,
        "{} vs {}",
        a.mean,
        b.mean
    );
}

#[test]
fn fbm_paths_drive_the_segment_flow() {
    let cfg = DriverConfig::fbm(0.25, 1, 200, 1.0, 5);
    let generator = PathGenerator::new(&cfg).unwrap();
    let model = LqModel::scalar(1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0);
    let path = generator.path(0);
    let traj = simulate_state(
        &model,
        &sig_lqc::simulation::ConstantControl(vec![0.0]),
        &path,
        Scheme::SegmentFlow,
    )
    .unwrap();
    // Linear dX = X dt + X ∘ dW has the pathwise solution exp(t + W_t).
    for i in 0..path.len() {
        let exact = (path.times()[i] + path.value(i)[0]).exp();
        assert!((traj.state(i)[0] - exact).abs() <= 1e-10 * exact);
    }
}
