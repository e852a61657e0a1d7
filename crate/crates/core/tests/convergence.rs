use nulltext::denoiser::{ClassMixture, Component};
use nulltext::seed::SeedSequence;
use nulltext::{
    Condition, DisturbanceStrategy, GmmDenoiser, GuidanceScale, LabeledMixture, Latent, Sampler,
    ScheduleParams,
};

fn delta(mu: &[f64]) -> LabeledMixture {
    LabeledMixture::new(
        mu.len(),
        vec![1.0],
        vec![ClassMixture {
            label: 0,
            components: vec![Component {
                weight: 1.0,
                mean: mu.to_vec(),
                variances: vec![1e-10; mu.len()],
            }],
        }],
    )
    .unwrap()
}

#[test]
fn delta_data_lands_on_its_mode() {
    let mu = [0.7, -1.3, 2.1];
    let sched = ScheduleParams::default().build().unwrap();
    let den = GmmDenoiser::new(delta(&mu), sched.clone());
    let target = Latent::new(mu.to_vec()).unwrap();
    let coarse = sched.grid(100).unwrap();
    let fine = sched.grid(1000).unwrap();
    for seed in SeedSequence::new(8).chains(8) {
        let run = |grid| {
            Sampler::new(
                &den,
                &sched,
                grid,
                Condition::Class(0),
                GuidanceScale::new(7.5).unwrap(),
            )
            .sample_free(&DisturbanceStrategy::None, seed)
            .unwrap()
            .sample
        };
        let (a, b) = (run(&coarse), run(&fine));
        assert!(a.distance(&target) < 1e-2, "N=100: {:?}", a.as_slice());
        assert!(b.distance(&target) < 1e-2, "N=1000: {:?}", b.as_slice());
        assert!(a.distance(&b) < 1e-2);
    }
}
