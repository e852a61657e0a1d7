#![allow(dead_code)]

use nulltext::analysis::Lab;
use nulltext::config::RunConfig;
use nulltext::denoiser::{ClassMixture, Component};
use nulltext::{Condition, DdimGrid, Denoiser, LabeledMixture, Latent, NoiseSchedule, ScheduleParams};

pub fn two_class_lab() -> Lab {
    Lab::new(
        RunConfig::default().load_dataset().unwrap(),
        ScheduleParams::default(),
    )
    .unwrap()
}

pub fn latent(v: &[f64]) -> Latent {
    Latent::new(v.to_vec()).unwrap()
}

/// Three classes of two components each, in `dim` dimensions, with uneven
/// weights and anisotropic variances.
pub fn three_class(dim: usize) -> LabeledMixture {
    let comp = |w: f64, shift: f64, var: f64| Component {
        weight: w,
        mean: (0..dim)
            .map(|i| shift * (1.0 + 0.3 * i as f64) * if i % 2 == 0 { 1.0 } else { -0.5 })
            .collect(),
        variances: (0..dim).map(|i| var * (1.0 + 0.5 * i as f64)).collect(),
    };
    LabeledMixture::new(
        dim,
        vec![0.2, 0.3, 0.5],
        vec![
            ClassMixture {
                label: 0,
                components: vec![comp(0.3, -2.0, 0.05), comp(0.7, -0.5, 0.2)],
            },
            ClassMixture {
                label: 1,
                components: vec![comp(0.5, 1.0, 0.1), comp(0.5, 2.5, 0.03)],
            },
            ClassMixture {
                label: 4,
                components: vec![comp(0.9, 0.2, 0.5), comp(0.1, -3.0, 0.08)],
            },
        ],
    )
    .unwrap()
}

/// Plain guided DDIM written out longhand, sharing only the schedule and the
/// noise predictor with the library. Returns every visited latent, from
/// `from` down to 0.
pub fn reference_loop(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    grid: &DdimGrid,
    prompt: Condition,
    gamma: f64,
    x_start: &Latent,
    from: usize,
) -> Vec<(usize, Vec<f64>)> {
    let stride = grid.stride();
    let mut x: Vec<f64> = x_start.as_slice().to_vec();
    let mut out = vec![(from, x.clone())];
    let mut t = from;
    while t > 0 {
        let t_prev = t - stride;
        let xl = Latent::new(x.clone()).unwrap();
        let text = denoiser.epsilon(&xl, prompt, t).unwrap();
        let null = denoiser.epsilon(&xl, Condition::Null, t).unwrap();
        let ab = schedule.alpha_bar(t).unwrap();
        let ab_prev = schedule.alpha_bar(t_prev).unwrap();
        for i in 0..x.len() {
            let e = gamma * text[i] + (1.0 - gamma) * null[i];
            let x0 = (x[i] - (1.0 - ab).sqrt() * e) / ab.sqrt();
            x[i] = ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * e;
        }
        t = t_prev;
        out.push((t, x.clone()));
    }
    out
}

/// Relative closeness with an absolute floor.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Claims a disturbance at every step but hands back `x_t` itself.
pub struct Echo;

impl nulltext::sampler::SigmaSelector for Echo {
    fn select(
        &self,
        ctx: &nulltext::guidance::SigmaContext<'_>,
    ) -> nulltext::Result<(Latent, nulltext::guidance::SigmaSource)> {
        Ok((
            ctx.x_t.clone(),
            nulltext::guidance::SigmaSource::FromTrajectory(ctx.t),
        ))
    }
}

/// First timestep at which `got` and `want` differ bitwise, if any.
pub fn trajectory_mismatch(got: &nulltext::sampler::Trajectory, want: &[(usize, Vec<f64>)]) -> Option<usize> {
    let got: Vec<(usize, &Latent)> = got.iter().collect();
    if got.len() != want.len() {
        return Some(usize::MAX);
    }
    got.iter()
        .zip(want)
        .find(|((t, x), (wt, wx))| t != wt || !x.bit_eq(&latent(wx)))
        .map(|((t, _), _)| *t)
}
