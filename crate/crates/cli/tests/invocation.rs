use nestlab::maps::{FamilySpec, MapFamily};
use nestlab_cli::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use std::path::PathBuf;

fn family() -> impl Strategy<Value = FamilySpec> {
    prop_oneof![
        (-0.25..2.0f64).prop_map(|a| FamilySpec { family: MapFamily::Quadratic, params: vec![a] }),
        (-1.0..1.0f64).prop_map(|t| FamilySpec { family: MapFamily::NormalizedQuadratic, params: vec![t] }),
        ((1.0..2.0f64), (-0.1..0.1f64)).prop_map(|(a, e)| FamilySpec { family: MapFamily::PerturbedQuadratic, params: vec![a, e] }),
    ]
}

fn common() -> impl Strategy<Value = Common> {
    (
        proptest::option::of(prop_oneof![Just(OutFormat::Json), Just(OutFormat::Csv), Just(OutFormat::Text)]),
        proptest::option::of(53u32..=106),
        proptest::option::of("[a-z]{1,8}\\.cfg"),
        proptest::option::of("[a-z]{1,8}\\.csv"),
    )
        .prop_map(|(format, bits, config, out)| Common {
            format,
            bits,
            config: config.map(PathBuf::from),
            out: out.map(PathBuf::from),
        })
}

fn budgets() -> impl Strategy<Value = BudgetArgs> {
    (
        proptest::option::of(1usize..100_000),
        proptest::option::of(1usize..1000),
        proptest::option::of(1usize..128),
        proptest::option::of(1usize..10),
        proptest::option::of(2usize..100_000),
        proptest::option::of(100usize..1_000_000),
        proptest::option::of(0.0..1.0f64),
        proptest::option::of(1usize..1_000_000),
    )
        .prop_map(|(a, b, c, d, e, f, g, h)| BudgetArgs {
            max_iter: a,
            max_period: b,
            renorm_max_period: c,
            nest_levels: d,
            ce_n: e,
            recurrence_n: f,
            ce_threshold: g,
            max_critical_return: h,
        })
}

fn invocation() -> impl Strategy<Value = Invocation> {
    let cmd = prop_oneof![
        (family(), 1usize..8, proptest::option::of(1e-12..1e-2f64), proptest::option::of(1usize..1_000_000), common())
            .prop_map(|(family, levels, min_branch, budget, common)| Cmd::Nest(NestArgs { family, levels, min_branch, budget, common })),
        (
            family(),
            2usize..100_000,
            proptest::option::of(1usize..=20),
            proptest::option::of(100usize..1_000_000),
            proptest::option::of(proptest::collection::vec(1e-6..1.0f64, 1..4)),
            1000usize..1_000_000,
            (1usize..6, any::<bool>(), proptest::option::of("[a-z]{1,6}\\.cfg"), 8usize..500),
            common()
        )
            .prop_map(|(family, ce, bce, recurrence, wr, wr_n, (levels, taxonomy, consts, grid), common)| {
                Cmd::Stats(StatsArgs {
                    family,
                    ce,
                    bce,
                    recurrence,
                    wr,
                    wr_n,
                    levels,
                    taxonomy,
                    consts: consts.map(PathBuf::from),
                    grid,
                    common,
                })
            }),
        (family(), proptest::collection::vec(-2.0..2.0f64, 1..3), 1usize..500, proptest::option::of(2usize..1000), common()).prop_map(
            |(family, direction, terms, field_degree, common)| Cmd::Transversality(TransversalityArgs {
                family,
                direction,
                terms,
                field_degree,
                common
            })
        ),
        (family(), 1usize..500, common()).prop_map(|(family, depth, common)| Cmd::Kneading(KneadingArgs { family, depth, common })),
        (family(), 1e-15..1e-3f64, 1usize..500, common()).prop_map(|(family, tol, depth, common)| Cmd::Straighten(StraightenArgs {
            family,
            tol,
            depth,
            common
        })),
        (family(), budgets(), common()).prop_map(|(family, budgets, common)| Cmd::Classify(ClassifyArgs { family, budgets, common })),
        (
            prop_oneof![Just(MapFamily::Quadratic), Just(MapFamily::NormalizedQuadratic), Just(MapFamily::PerturbedQuadratic)],
            "a=1\\.[0-9]:2(,eps=0)?",
            1usize..100_000,
            any::<u64>(),
            proptest::option::of(1usize..64),
            budgets(),
            common()
        )
            .prop_map(|(family, window, samples, seed, jobs, budgets, common)| Cmd::Scan(ScanArgs {
                family,
                window,
                samples,
                seed,
                jobs,
                budgets,
                common
            })),
        (family(), 1usize..6, 1e-15..1e-3f64, common()).prop_map(|(family, level, tol, common)| Cmd::Window(WindowArgs {
            family,
            level,
            tol,
            common
        })),
    ];
    cmd.prop_map(|command| Invocation { command })
}

#[test]
fn render_then_parse_is_identity() {
    std::env::remove_var("NESTLAB_BITS");
    let config = Config { cases: 10_000, failure_persistence: None, ..Config::default() };
    let rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[7; 32]);
    let mut runner = TestRunner::new_with_rng(config, rng);
    runner
        .run(&invocation(), |inv| {
            let argv: Vec<String> = std::iter::once("nestlab".to_string()).chain(inv.render()).collect();
            let back = Invocation::parse(&argv).map_err(|e| TestCaseError::fail(format!("{argv:?}: {e}")))?;
            prop_assert_eq!(back, inv);
            Ok(())
        })
        .unwrap();
}
