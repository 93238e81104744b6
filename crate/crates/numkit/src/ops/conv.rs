use crate::error::{check_dim, NumError, Result};
use crate::graph::{Graph, Var};
use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tensor::Tensor;

/// Hyper-parameters of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: 1,
            dilation: 1,
            groups: 1,
        }
    }
}

impl ConvSpec {
    pub fn stride(stride: usize) -> Self {
        ConvSpec {
            stride,
            ..Default::default()
        }
    }

    pub fn dilated(dilation: usize, groups: usize) -> Self {
        ConvSpec {
            stride: 1,
            dilation,
            groups,
        }
    }
}

pub(crate) fn conv_geom(x_shape: &[usize], w_shape: &[usize], spec: ConvSpec) -> Result<ConvGeom> {
    let (c_in, t_in) = match x_shape {
        [c, t] => (*c, *t),
        _ => {
            return Err(NumError::Rank {
                op: "conv1d",
                expected: 2,
                shape: x_shape.to_vec(),
            })
        }
    };
    let (c_out, cin_g, k) = match w_shape {
        [a, b, c] => (*a, *b, *c),
        _ => {
            return Err(NumError::Rank {
                op: "conv1d",
                expected: 3,
                shape: w_shape.to_vec(),
            })
        }
    };
    if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
        return Err(NumError::Config(
            "conv1d stride, dilation and groups must be at least 1".into(),
        ));
    }
    if c_in % spec.groups != 0 {
        return Err(NumError::Config(format!(
            "conv1d: {c_in} input channels not divisible by {} groups",
            spec.groups
        )));
    }
    if c_out % spec.groups != 0 {
        return Err(NumError::Config(format!(
            "conv1d: {c_out} output channels not divisible by {} groups",
            spec.groups
        )));
    }
    check_dim("conv1d", "input channels per group", c_in / spec.groups, cin_g)?;
    Ok(ConvGeom {
        c_in,
        c_out,
        t_in,
        kernel: k,
        stride: spec.stride,
        dilation: spec.dilation,
        groups: spec.groups,
    })
}

impl<R: Real> Graph<R> {
    /// Same-padded 1-D cross-correlation.
    ///
    /// `x` is `[C_in × T]`, `w` is `[C_out × C_in/groups × K]`, the optional
    /// bias is `[C_out]`. Output is `[C_out × ceil(T/stride)]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let geom = conv_geom(self.shape(x), self.shape(w), spec)?;
        if let Some(b) = bias {
            check_dim("conv1d", "bias length", geom.c_out, self.value(b).numel())?;
        }
        let data = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::new(&[geom.c_out, geom.t_out()], data)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.custom(&inputs, value, move |c| {
            let need_b = has_bias && c.needs[2];
            let (dx, dw, db) = kernels::conv1d_backward(
                c.inputs[0].data(),
                c.inputs[1].data(),
                c.grad,
                &geom,
                c.needs[0],
                c.needs[1],
                need_b,
            );
            let mut out = vec![dx, dw];
            if has_bias {
                out.push(db);
            }
            out
        }))
    }
}
