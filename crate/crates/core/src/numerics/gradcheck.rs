//! Central finite differences against the tape's gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Session, Var};

/// Above this many coordinates only a 1% random sample is checked.
pub const FULL_CHECK_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and coordinate of the worst mismatch.
    pub worst: Option<(String, usize)>,
}

fn rel_error(fd: f64, ad: f64) -> f64 {
    (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-8)
}

/// Compares autodiff gradients of the scalar built by `f` with central
/// differences of step `eps` on every parameter coordinate.
pub fn gradient_check<F>(params: &mut ParamStore, eps: f64, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Session<'_>) -> Result<Var>,
{
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut s = Session::new(p, false);
        let out = f(&mut s)?;
        let v = s.tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };

    let analytic = {
        let mut s = Session::new(params, true);
        let out = f(&mut s)?;
        if !s.tape.value(out).item().is_finite() {
            return Err(Error::NonFinite("objective is not finite".into()));
        }
        s.param_grads(out)?
    };

    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (pi, (_, t)) in params.iter().enumerate() {
        coords.extend((0..t.len()).map(|j| (pi, j)));
    }
    if coords.len() > FULL_CHECK_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = coords.len().div_ceil(100);
        let mut picked: Vec<usize> = sample(&mut rng, coords.len(), keep).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }

    let ids: Vec<_> = params.ids().collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: coords.len(),
        worst: None,
    };
    for (pi, j) in coords {
        let id = ids[pi];
        let orig = params.get(id).data()[j];
        params.get_mut(id).data_mut()[j] = orig + eps;
        let plus = eval(params);
        params.get_mut(id).data_mut()[j] = orig - eps;
        let minus = eval(params);
        params.get_mut(id).data_mut()[j] = orig;
        let fd = (plus? - minus?) / (2.0 * eps);
        let ad = analytic[pi].as_ref().map_or(0.0, |g| g[j]);
        if !ad.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {} at {j}", params.name(id))));
        }
        let err = rel_error(fd, ad);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((params.name(id).to_string(), j));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::Rng;

    fn random_store(seed: u64, shapes: &[(&str, usize, usize)]) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        for &(name, r, c) in shapes {
            let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            p.insert(name, Tensor::matrix(r, c, data).unwrap()).unwrap();
        }
        p
    }

    #[test]
    fn quadratic_matches_analytic() {
        let mut p = random_store(1, &[("w", 1, 6)]);
        let report = gradient_check(&mut p, 1e-4, 0, |s| {
            let w = s.param_named("w")?;
            let sq = s.tape.mul(w, w)?;
            Ok(s.tape.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        // Independent check against 2w.
        let mut s = Session::new(&p, true);
        let w = s.param_named("w").unwrap();
        let sq = s.tape.mul(w, w).unwrap();
        let out = s.tape.sum(sq);
        let g = s.param_grads(out).unwrap();
        for (gi, wi) in g[0].as_ref().unwrap().iter().zip(p.by_name("w").unwrap().data()) {
            assert!((gi - 2.0 * wi).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_objective_has_zero_error() {
        let mut p = random_store(2, &[("w", 2, 2)]);
        let report = gradient_check(&mut p, 1e-4, 0, |s| Ok(s.tape.constant(Tensor::scalar(3.0)))).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_is_reported() {
        let mut p = random_store(3, &[("w", 1, 2)]);
        let err = gradient_check(&mut p, 1e-4, 0, |s| {
            let w = s.param_named("w")?;
            let z = s.tape.scale(w, 0.0);
            let l = s.tape.ln(z);
            Ok(s.tape.sum(l))
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn large_stores_are_sampled() {
        let mut p = random_store(4, &[("w", 101, 100)]);
        let report = gradient_check(&mut p, 1e-4, 9, |s| {
            let w = s.param_named("w")?;
            Ok(s.tape.sum(w))
        })
        .unwrap();
        assert_eq!(report.checked, 101);
    }

    /// Every differentiable op on random small shapes.
    #[test]
    fn every_op_passes() {
        let shapes = [
            ("a", 3, 4),
            ("b", 4, 5),
            ("row", 1, 5),
            ("c", 3, 5),
            ("g", 3, 1),
            ("gain", 1, 5),
            ("bias", 1, 5),
            ("table", 6, 5),
            ("q", 2, 5),
            ("k", 4, 5),
            ("w", 1, 5),
        ];
        type Build = fn(&mut Session<'_>) -> Result<Var>;
        let cases: Vec<(&str, Build)> = vec![
            ("matmul", |s| {
                let (a, b) = (s.param_named("a")?, s.param_named("b")?);
                let m = s.tape.matmul(a, b)?;
                let t = s.tape.tanh(m);
                Ok(s.tape.sum(t))
            }),
            ("add_row_mul_col", |s| {
                let (c, r, g) = (s.param_named("c")?, s.param_named("row")?, s.param_named("g")?);
                let x = s.tape.add_row(c, r)?;
                let y = s.tape.mul_col(x, g)?;
                let z = s.tape.mul(y, x)?;
                Ok(s.tape.sum(z))
            }),
            ("concat_slice_transpose", |s| {
                let (a, c) = (s.param_named("a")?, s.param_named("c")?);
                let cat = s.tape.concat_cols(&[a, c])?;
                let sl = s.tape.slice_cols(cat, 2, 5)?;
                let t = s.tape.transpose(sl);
                let sq = s.tape.mul(t, t)?;
                let af = s.tape.affine(sq, -0.5, 2.0);
                Ok(s.tape.sum(af))
            }),
            ("concat_slice_rows", |s| {
                let (a, c) = (s.param_named("c")?, s.param_named("q")?);
                let cat = s.tape.concat_rows(&[a, c])?;
                let sl = s.tape.slice_rows(cat, 1, 3)?;
                let sq = s.tape.mul(sl, sl)?;
                Ok(s.tape.sum(sq))
            }),
            ("softmax_ce", |s| {
                let c = s.param_named("c")?;
                let sm = s.tape.softmax(c);
                let w = s.tape.constant(Tensor::matrix(3, 5, (0..15).map(f64::from).collect())?);
                let p = s.tape.mul(sm, w)?;
                let a = s.tape.sum(p);
                let ce = s.tape.cross_entropy(c, &[0, 4, 2])?;
                s.tape.add(a, ce)
            }),
            ("relu_sigmoid_log", |s| {
                let c = s.param_named("c")?;
                let r = s.tape.relu(c);
                let sg = s.tape.sigmoid(c);
                let l = s.tape.ln(sg);
                let x = s.tape.add(r, l)?;
                Ok(s.tape.sum(x))
            }),
            ("layer_norm", |s| {
                let (c, g, b) = (s.param_named("c")?, s.param_named("gain")?, s.param_named("bias")?);
                let y = s.tape.layer_norm(c, g, b)?;
                let t = s.tape.tanh(y);
                let sq = s.tape.mul(t, y)?;
                Ok(s.tape.sum(sq))
            }),
            ("embedding_masked", |s| {
                let t = s.param_named("table")?;
                let e = s.tape.embedding(t, &[1, 3, 1])?;
                let m = s.tape.masked_fill(e, &[false, true, false, false, true].repeat(3))?;
                let sm = s.tape.softmax(m);
                let sq = s.tape.mul(sm, e)?;
                Ok(s.tape.sum(sq))
            }),
            ("scatter_nll_repeat", |s| {
                let (q, r) = (s.param_named("q")?, s.param_named("row")?);
                let rep = s.tape.repeat_rows(r, 2)?;
                let x = s.tape.add(q, rep)?;
                let sm = s.tape.softmax(x);
                let sc = s.tape.scatter_cols(sm, &[0, 2, 2, 1, 0], 3)?;
                s.tape.nll_sum(sc, &[2, 0])
            }),
            ("additive_scores", |s| {
                let (q, k, w) = (s.param_named("q")?, s.param_named("k")?, s.param_named("w")?);
                let sc = s.tape.additive_scores(q, k, w)?;
                let sm = s.tape.softmax(sc);
                let sq = s.tape.mul(sm, sc)?;
                Ok(s.tape.sum(sq))
            }),
        ];
        for (i, (name, build)) in cases.into_iter().enumerate() {
            let mut p = random_store(100 + i as u64, &shapes);
            let report = gradient_check(&mut p, 1e-4, 0, build).unwrap();
            assert!(report.max_rel_error < 1e-6, "{name}: {report:?}");
        }
    }
}
