use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use fisheropt::cases::{kinetics_instance, kinetics_limits, rotary_instance, Instance};
use fisheropt::doptsolve::{solve_minlp_dopt, solve_relaxed_dopt};
use fisheropt::milp::{solve_lp_relaxation, solve_milp};
use fisheropt::symmat::eig_sym;
use fisheropt::{BnbConfig, FwConfig, OaConfig, Objective};

fn kinetics() -> Instance {
    kinetics_instance().expect("kinetics instance")
}

fn bench_atoms(c: &mut Criterion) {
    c.bench_function("kinetics atoms", |b| b.iter(kinetics));
    c.bench_function("rotary atoms", |b| b.iter(|| rotary_instance(black_box(7)).unwrap()));
}

fn bench_eig(c: &mut Criterion) {
    let inst = kinetics();
    let m = inst.atoms.full_information();
    c.bench_function("eig_sym 4x4", |b| b.iter(|| eig_sym(black_box(&m)).unwrap()));
}

fn bench_kinetics_solvers(c: &mut Criterion) {
    let inst = kinetics();
    let mut g = c.benchmark_group("kinetics");
    g.sample_size(10);
    for budget in [1400.0, 3000.0, 5000.0] {
        let pa = inst.problem(Objective::AOptimality, budget, kinetics_limits(), false).unwrap();
        let pd = inst.problem(Objective::DOptimality, budget, kinetics_limits(), false).unwrap();
        let pr = inst.problem(Objective::DOptimality, budget, kinetics_limits(), true).unwrap();
        g.bench_with_input(BenchmarkId::new("a-lp", budget), &pa, |b, p| {
            b.iter(|| solve_lp_relaxation(p, &Default::default()).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("a-milp", budget), &pa, |b, p| {
            b.iter(|| solve_milp(p, &BnbConfig::default()).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("d-nlp", budget), &pr, |b, p| {
            b.iter(|| solve_relaxed_dopt(p, &FwConfig::default()).unwrap())
        });
        if budget >= 3000.0 {
            g.bench_with_input(BenchmarkId::new("d-minlp", budget), &pd, |b, p| {
                b.iter(|| solve_minlp_dopt(p, &OaConfig::default()).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(setup, bench_atoms, bench_eig);
criterion_group!(solvers, bench_kinetics_solvers);
criterion_main!(setup, solvers);
