use super::scan::{check_signs, scan_backward, scan_forward, Discretization, ScanAlgorithm, ScanDims};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<S: Scalar> Graph<S> {
    /// Selective scan as a differentiable primitive.
    ///
    /// `u`, `delta`: `[G, L, D]`; `a`: `[D, N]` (negative); `b`, `c`:
    /// `[G, L, N]`; `d_skip`: `[D]`. Returns `y`: `[G, L, D]`. Only `y` is
    /// kept; the backward rule recomputes the hidden states.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(
        &mut self,
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d_skip: Var,
        mode: Discretization,
        algo: ScanAlgorithm,
    ) -> Result<Var> {
        let [uv, dv, av, bv, cv, sv] = [u, delta, a, b, c, d_skip].map(|v| self.value(v).clone());
        let dims = ScanDims::check(&uv, &dv, &av, &bv, &cv, &sv)?;
        check_signs(&av, &dv)?;
        let y = scan_forward(dims, mode, algo, uv.data(), dv.data(), av.data(), bv.data(), cv.data(), sv.data());
        let out = Tensor::from_parts(uv.shape().to_vec(), y);
        self.push(
            "selective_scan",
            out,
            &[u, delta, a, b, c, d_skip],
            Box::new(move |g| {
                let gr = scan_backward(dims, mode, uv.data(), dv.data(), av.data(), bv.data(), cv.data(), sv.data(), g.data());
                let t = |src: &Tensor<S>, data: Vec<S>| Some(Tensor::from_parts(src.shape().to_vec(), data));
                Ok(vec![
                    t(&uv, gr.du),
                    t(&dv, gr.ddelta),
                    t(&av, gr.da),
                    t(&bv, gr.db),
                    t(&cv, gr.dc),
                    t(&sv, gr.dd),
                ])
            }),
        )
    }
}
