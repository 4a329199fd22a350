use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use critdet::constants::hz_to_rad;
use critdet::fokker_planck::{detection_probabilities, FpConfig};
use critdet::langevin::{map_phase_diagram, simulate_ensemble, PhaseDiagramConfig, ProbeField, SimOptions};
use critdet::potential::OperatingPoint;
use critdet::protocol::{build_pulse_sequence, PulseConfig, PulseSequence};
use critdet::Execution;

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Auto)]
}

fn langevin_ensemble(c: &mut Criterion) {
    let op = OperatingPoint::reference();
    let pulse = PulseSequence::continuous(2e-6);
    let opts = SimOptions { record_every: 10, ..SimOptions::default() };
    let mut g = c.benchmark_group("langevin_ensemble_256x2us");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate_ensemble(&op, &ProbeField::off(), &pulse, 2e-6, &opts, 1, 256, exec).unwrap())
        });
    }
    g.finish();
}

fn phase_diagram(c: &mut Criterion) {
    let op = OperatingPoint::reference();
    let alphas = [0.4, 0.5, 0.6, 0.7];
    let deltas: Vec<f64> = [-2e6, 0.0, 2e6].iter().map(|&d| hz_to_rad(d)).collect();
    let mut g = c.benchmark_group("phase_diagram_4x3");
    g.sample_size(10);
    for (name, exec) in modes() {
        let cfg = PhaseDiagramConfig { ensemble_size: 8, duration: 4e-6, window_start: 2e-6, execution: exec, ..Default::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| map_phase_diagram(&op, &alphas, &deltas, &cfg).unwrap())
        });
    }
    g.finish();
}

fn fokker_planck_sweep(c: &mut Criterion) {
    let op = OperatingPoint::reference();
    let cfg = FpConfig::for_operating_point(&op);
    let pulse = build_pulse_sequence(&PulseConfig::default()).unwrap();
    let amplitudes: Vec<f64> = (0..8).map(|k| 250.0 * k as f64).collect();
    let mut g = c.benchmark_group("fokker_planck_detection_8");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.map(&amplitudes, |_, &amp| detection_probabilities(&op, amp, &pulse, &cfg).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, langevin_ensemble, phase_diagram, fokker_planck_sweep);
criterion_main!(benches);
