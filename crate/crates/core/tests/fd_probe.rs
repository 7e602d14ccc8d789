use mfn_core::init::{rng_from_seed, uniform_pm1};
use mfn_core::layers::oracle64::{Forward64, Map64};
use mfn_core::layers::Differentiable;
use mfn_core::models::segnet::{SegNet, SegNetConfig};
use mfn_core::tensor::{Parameter, Tensor4};
use mfn_core::Result;

struct M(SegNet);
impl Forward64 for M {
    fn forward_f64(&self, x: &Map64) -> Result<Map64> { self.0.forward_f64(x) }
}
impl Differentiable for M {
    fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> { Ok(self.0.forward(x)?.full) }
    fn backward(&mut self, g: &Tensor4) -> Result<Tensor4> { self.0.backward(g, &[]) }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> { self.0.parameters_mut() }
}

#[test]
fn probe_values() {
    let mut rng = rng_from_seed(77);
    let seg = SegNet::new(SegNetConfig::new(3, 6).with_widths([8, 16, 16, 16, 16]), &mut rng);
    let x = uniform_pm1((1, 3, 32, 32), &mut rng);
    let mut m = M(seg);
    for p in m.parameters_mut() { p.zero_grad(); }
    let y0 = m.forward(&x).unwrap();
    let proj = uniform_pm1(y0.dims(), &mut rng_from_seed(5));
    m.backward(&proj).unwrap();

    let center = Map64::from_tensor(&x);
    let obj = |m: &M, inp: &Map64| -> f64 {
        let y = m.forward_f64(inp).unwrap();
        y.data.iter().zip(proj.data()).map(|(&a, &g)| a * g as f64).sum()
    };
    // also check: does forward_f64 at the center match forward f32?
    let y64 = m.forward_f64(&center).unwrap();
    let mut max_fwd_diff = 0.0f64;
    for (&a, &b) in y64.data.iter().zip(y0.data()) {
        max_fwd_diff = max_fwd_diff.max((a - b as f64).abs());
    }
    eprintln!("forward f32-vs-f64 max diff: {max_fwd_diff:.3e}");

    let n_params = m.parameters_mut().len();
    let h = 1e-5f32;
    let mut worst: Vec<(String, usize, f64, f64, f64)> = Vec::new();
    for pi in 0..n_params {
        let (name, g0, len) = {
            let ps = m.parameters_mut();
            (ps[pi].name.clone(), ps[pi].grad.clone(), ps[pi].grad.len())
        };
        for i in (0..len).step_by((len / 24).max(1)) {
            let c = m.parameters_mut()[pi].value.data()[i];
            let pv = c + h;
            let mv = c - h;
            m.parameters_mut()[pi].value.data_mut()[i] = pv;
            let lp = obj(&m, &center);
            m.parameters_mut()[pi].value.data_mut()[i] = mv;
            let lm = obj(&m, &center);
            m.parameters_mut()[pi].value.data_mut()[i] = c;
            let n = (lp - lm) / (pv as f64 - mv as f64);
            let a = g0.data()[i] as f64;
            let diff = (a - n).abs();
            let rel = if diff <= 1e-4 { 0.0 } else { diff / a.abs().max(n.abs()) };
            if rel > 8e-4 {
                worst.push((name.clone(), i, a, n, rel));
            }
        }
    }
    worst.sort_by(|x, y| y.4.partial_cmp(&x.4).unwrap());
    for (name, i, a, n, rel) in worst.iter().take(12) {
        eprintln!("{name}[{i}]: analytic {a:+.6} numeric {n:+.6} rel {rel:.3e}");
    }
}
