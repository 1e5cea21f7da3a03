//! Fully connected networks with residual skips and an exact backward pass.
//!
//! Layout conventions: inputs are row-major `n × d_in` (one row per point),
//! weights are `out × in`. Every layer except the last is followed by the
//! activation. Layers are grouped into blocks of two; a block whose output
//! width is at least its input width adds its input back (zero-padded to the
//! output width) after the second layer. Blocks that narrow have no skip, and
//! a trailing odd layer never has one.
//!
//! The first layer accepts its input in two parts, a per-row `varying` block
//! and a `shared` vector appended to every row. This is numerically the same
//! map as concatenating `[varying | shared]` on every row, but the shared
//! product is computed once.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::{Error, Real, Result};

/// The one activation used everywhere: SiLU, `z * sigmoid(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "silu" => Some(Activation::Silu),
            _ => None,
        }
    }

    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Silu => z * sigmoid(z),
        }
    }

    #[inline]
    fn derivative<T: Real>(self, z: T) -> T {
        match self {
            Activation::Silu => {
                let sg = sigmoid(z);
                sg * (T::one() + z * (T::one() - sg))
            }
        }
    }
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (T::zero() - z).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `out × in`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Layer<T> {
    pub fn new(weight: Array2<T>, bias: Array1<T>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        Ok(Self {
            weight: weight.as_standard_layout().into_owned(),
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Places the first-layer "kinks" of coordinate features inside a region of
/// interest instead of leaving them at the origin of the encoding.
///
/// For each first-layer unit, the weights on the leading `n_coord` input
/// columns are drawn with standard deviation `scale`, and the bias is chosen
/// so the unit's pre-activation (coordinate part only) vanishes at an anchor
/// drawn from `anchors`.
#[derive(Debug, Clone)]
pub struct CoordInit {
    pub n_coord: usize,
    pub scale: f64,
    pub anchors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct MlpInit {
    /// Zero the final layer so the network starts as the zero map
    /// (plus whatever the skip path carries).
    pub zero_last: bool,
    pub coord: Option<CoordInit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
    activation: Activation,
}

/// Cached intermediate values of a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Trace<T> {
    varying: Array2<T>,
    shared: Array1<T>,
    /// Input to layer `l` for `l >= 1` (index 0 unused).
    layer_inputs: Vec<Array2<T>>,
    /// Pre-activation of layer `l` (empty for the last layer).
    pre: Vec<Array2<T>>,
    output: Array2<T>,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> &Array2<T> {
        &self.output
    }

    pub fn into_output(self) -> Array2<T> {
        self.output
    }
}

/// Gradients with the same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub layers: Vec<(Array2<T>, Array1<T>)>,
}

impl<T: Real> MlpGrads<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weight.raw_dim()),
                        Array1::zeros(l.bias.raw_dim()),
                    )
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|x| x * factor);
            b.mapv_inplace(|x| x * factor);
        }
    }

    /// Flat views in the same order as [`Mlp::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (w, b) in &self.layers {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|&x| x == T::zero()))
    }
}

impl<T: Real> Mlp<T> {
    pub fn from_layers(layers: Vec<Layer<T>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.iter().chain(l.bias.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Invalid(format!("layer {i} has non-finite entries")));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Random initialization. `dims` has `depth + 1` entries: input width,
    /// hidden widths, output width.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], init: &MlpInit, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape("need at least input and output widths".into()));
        }
        let depth = dims.len() - 1;
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let mut weight = Array2::<T>::zeros((fan_out, fan_in));
            let mut bias = Array1::<T>::zeros(fan_out);
            let last = l + 1 == depth;
            if !(last && init.zero_last) {
                let std = 1.0 / (fan_in.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                weight.mapv_inplace(|_| T::from_f64(normal.sample(rng)));
            }
            if l == 0 {
                if let Some(ci) = &init.coord {
                    apply_coord_init(&mut weight, &mut bias, ci, rng)?;
                }
            }
            layers.push(Layer { weight, bias });
        }
        Self::from_layers(layers, Activation::Silu)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths `[in, h1, ..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim()));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Flat mutable views: weight then bias, layer by layer.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.mapv(|x| U::from_f64(x.to_f64())),
                    bias: l.bias.mapv(|x| U::from_f64(x.to_f64())),
                })
                .collect(),
            activation: self.activation,
        }
    }

    fn skip_for_block(&self, block: usize) -> bool {
        let first = 2 * block;
        let second = first + 1;
        second < self.layers.len() && self.layers[second].out_dim() >= self.layers[first].in_dim()
    }

    fn n_blocks(&self) -> usize {
        self.layers.len().div_ceil(2)
    }

    pub fn forward(&self, inputs: ArrayView2<T>) -> Result<Array2<T>> {
        let empty = Array1::<T>::zeros(0);
        Ok(self.forward_trace(inputs, empty.view())?.output)
    }

    /// Forward pass where every row is `[varying_row | shared]`.
    pub fn forward_shared(&self, varying: ArrayView2<T>, shared: ArrayView1<T>) -> Result<Array2<T>> {
        Ok(self.forward_trace(varying, shared)?.output)
    }

    pub fn forward_trace(&self, varying: ArrayView2<T>, shared: ArrayView1<T>) -> Result<Trace<T>> {
        let (a, b) = (varying.ncols(), shared.len());
        if a + b != self.in_dim() {
            return Err(Error::Shape(format!(
                "network expects {} input features, got {} (+{} shared)",
                self.in_dim(),
                a,
                b
            )));
        }
        let n = varying.nrows();
        let depth = self.layers.len();
        let mut layer_inputs: Vec<Array2<T>> = Vec::with_capacity(depth);
        layer_inputs.push(Array2::zeros((0, 0)));
        let mut pre: Vec<Array2<T>> = Vec::with_capacity(depth);
        let mut h: Array2<T> = Array2::zeros((0, 0));

        for block in 0..self.n_blocks() {
            let first = 2 * block;
            let last_in_block = (first + 2).min(depth);
            let block_in = if block == 0 { None } else { Some(h.clone()) };
            for l in first..last_in_block {
                let layer = &self.layers[l];
                let mut z = if l == 0 {
                    first_layer_pre(layer, varying, shared)
                } else {
                    let mut z = h.dot(&layer.weight.t());
                    z += &layer.bias;
                    z
                };
                if l + 1 < depth {
                    let act = self.activation;
                    pre.push(z.clone());
                    z.mapv_inplace(|v| act.apply(v));
                } else {
                    pre.push(Array2::zeros((0, 0)));
                }
                h = z;
                if l + 1 < depth {
                    layer_inputs.push(h.clone());
                }
            }
            if self.skip_for_block(block) {
                match &block_in {
                    None => {
                        h.slice_mut(s![.., ..a]).zip_mut_with(&varying, |x, &v| *x = *x + v);
                        if b > 0 {
                            h.slice_mut(s![.., a..a + b])
                                .zip_mut_with(&shared.broadcast((n, b)).unwrap(), |x, &v| {
                                    *x = *x + v
                                });
                        }
                    }
                    Some(bi) => {
                        let w = bi.ncols();
                        h.slice_mut(s![.., ..w]).zip_mut_with(bi, |x, &v| *x = *x + v);
                    }
                }
                // the skip changes the input of the next layer
                if last_in_block < depth {
                    *layer_inputs.last_mut().unwrap() = h.clone();
                }
            }
        }

        Ok(Trace {
            varying: varying.to_owned(),
            shared: shared.to_owned(),
            layer_inputs,
            pre,
            output: h,
        })
    }

    /// Reverse pass. Returns parameter gradients plus the gradients with
    /// respect to the varying rows and the shared vector.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        upstream: ArrayView2<T>,
    ) -> Result<(MlpGrads<T>, Array2<T>, Array1<T>)> {
        if upstream.dim() != trace.output.dim() {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, output is {:?}",
                upstream.dim(),
                trace.output.dim()
            )));
        }
        let depth = self.layers.len();
        let a = trace.varying.ncols();
        let b = trace.shared.len();
        let mut grads = MlpGrads::zeros_like(self);
        let mut g = upstream.to_owned();
        let mut d_varying = Array2::<T>::zeros(trace.varying.raw_dim());
        let mut d_shared = Array1::<T>::zeros(b);

        for block in (0..self.n_blocks()).rev() {
            let first = 2 * block;
            let last_in_block = (first + 2).min(depth);
            let g_skip = if self.skip_for_block(block) {
                let w = self.layers[first].in_dim();
                Some(g.slice(s![.., ..w]).to_owned())
            } else {
                None
            };
            for l in (first..last_in_block).rev() {
                let layer = &self.layers[l];
                let gz = if l + 1 < depth {
                    let act = self.activation;
                    let mut gz = g;
                    Zip::from(&mut gz)
                        .and(&trace.pre[l])
                        .for_each(|x, &z| *x = *x * act.derivative(z));
                    gz
                } else {
                    g
                };
                let colsum = gz.sum_axis(Axis(0));
                if l == 0 {
                    let (dw, db) = &mut grads.layers[0];
                    dw.slice_mut(s![.., ..a]).assign(&gz.t().dot(&trace.varying));
                    if b > 0 {
                        let outer = colsum
                            .view()
                            .insert_axis(Axis(1))
                            .dot(&trace.shared.view().insert_axis(Axis(0)));
                        dw.slice_mut(s![.., a..]).assign(&outer);
                        d_shared += &layer.weight.slice(s![.., a..]).t().dot(&colsum);
                    }
                    db.assign(&colsum);
                    d_varying += &gz.dot(&layer.weight.slice(s![.., ..a]));
                    g = Array2::zeros((0, 0));
                } else {
                    let (dw, db) = &mut grads.layers[l];
                    dw.assign(&gz.t().dot(&trace.layer_inputs[l]));
                    db.assign(&colsum);
                    g = gz.dot(&layer.weight);
                }
            }
            if let Some(gs) = g_skip {
                if block == 0 {
                    d_varying += &gs.slice(s![.., ..a]);
                    if b > 0 {
                        d_shared += &gs.slice(s![.., a..a + b]).sum_axis(Axis(0));
                    }
                } else {
                    g += &gs;
                }
            }
        }
        Ok((grads, d_varying, d_shared))
    }

    /// Forward then backward for an unsplit input; the input gradient is
    /// returned as `n × d_in`.
    pub fn gradients(
        &self,
        inputs: ArrayView2<T>,
        upstream: ArrayView2<T>,
    ) -> Result<(MlpGrads<T>, Array2<T>)> {
        let empty = Array1::<T>::zeros(0);
        let trace = self.forward_trace(inputs, empty.view())?;
        let (g, dx, _) = self.backward(&trace, upstream)?;
        Ok((g, dx))
    }
}

fn first_layer_pre<T: Real>(layer: &Layer<T>, varying: ArrayView2<T>, shared: ArrayView1<T>) -> Array2<T> {
    let a = varying.ncols();
    let mut z = varying.dot(&layer.weight.slice(s![.., ..a]).t());
    let mut offset = layer.bias.clone();
    if !shared.is_empty() {
        offset += &layer.weight.slice(s![.., a..]).dot(&shared);
    }
    z += &offset;
    z
}

fn apply_coord_init<T: Real, R: Rng + ?Sized>(
    weight: &mut Array2<T>,
    bias: &mut Array1<T>,
    ci: &CoordInit,
    rng: &mut R,
) -> Result<()> {
    if ci.n_coord > weight.ncols() {
        return Err(Error::Shape("coordinate columns exceed input width".into()));
    }
    if ci.anchors.is_empty() || ci.anchors.iter().any(|a| a.len() != ci.n_coord) {
        return Err(Error::Invalid("coordinate init needs anchors of the coordinate width".into()));
    }
    let normal = Normal::new(0.0, ci.scale).map_err(|e| Error::Invalid(e.to_string()))?;
    let pick = Uniform::new(0, ci.anchors.len()).map_err(|e| Error::Invalid(e.to_string()))?;
    for k in 0..weight.nrows() {
        let anchor = &ci.anchors[pick.sample(rng)];
        let mut offset = 0.0;
        for c in 0..ci.n_coord {
            let w = normal.sample(rng);
            weight[[k, c]] = T::from_f64(w);
            offset += w * anchor[c];
        }
        bias[k] = T::from_f64(-offset);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_net(dims: &[usize]) -> Mlp<f64> {
        let layers = dims
            .windows(2)
            .map(|w| Layer::new(Array2::zeros((w[1], w[0])), Array1::zeros(w[1])).unwrap())
            .collect();
        Mlp::from_layers(layers, Activation::Silu).unwrap()
    }

    #[test]
    fn zero_weights_pass_input_through_skips() {
        let net = zero_net(&[3, 3, 3, 3, 3, 3, 3]);
        let x = array![[0.5, -1.0, 2.0], [3.0, 0.0, -0.25]];
        let y = net.forward(x.view()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn single_affine_layer() {
        let layer = Layer::new(array![[2.0]], array![1.0]).unwrap();
        let net = Mlp::from_layers(vec![layer], Activation::Silu).unwrap();
        let y = net.forward(array![[3.0]].view()).unwrap();
        assert_eq!(y, array![[7.0]]);
    }

    #[test]
    fn duplicate_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net: Mlp<f64> = Mlp::init(&[4, 16, 16, 16, 16, 16, 3], &MlpInit::default(), &mut rng).unwrap();
        let x = array![[0.1, 0.2, 0.3, 0.4], [0.1, 0.2, 0.3, 0.4], [-1.0, 0.0, 1.0, 2.0]];
        let y = net.forward(x.view()).unwrap();
        assert_eq!(y.row(0), y.row(1));
        // row independence: evaluating a row alone gives the same result
        let y2 = net.forward(x.slice(s![2..3, ..])).unwrap();
        assert_eq!(y.row(2), y2.row(0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = zero_net(&[3, 2]);
        assert!(matches!(net.forward(array![[1.0, 2.0]].view()), Err(Error::Shape(_))));
        let bad = vec![
            Layer::new(Array2::<f64>::zeros((2, 3)), Array1::zeros(2)).unwrap(),
            Layer::new(Array2::zeros((1, 4)), Array1::zeros(1)).unwrap(),
        ];
        assert!(Mlp::from_layers(bad, Activation::Silu).is_err());
    }

    #[test]
    fn identity_network_input_gradient_is_ones() {
        let net = zero_net(&[3, 3, 3]);
        let x = array![[0.3, -0.2, 1.0], [2.0, 1.0, 0.0]];
        let up = Array2::ones((2, 3));
        let (_, dx) = net.gradients(x.view(), up.view()).unwrap();
        assert_eq!(dx, Array2::ones((2, 3)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net: Mlp<f64> = Mlp::init(&[4, 8, 8, 2], &MlpInit::default(), &mut rng).unwrap();
        let x = array![[0.1, 0.2, 0.3, 0.4]];
        let (g, dx) = net.gradients(x.view(), Array2::zeros((1, 2)).view()).unwrap();
        assert!(g.is_zero());
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_split_matches_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net: Mlp<f64> = Mlp::init(&[6, 8, 8, 8, 3], &MlpInit::default(), &mut rng).unwrap();
        let varying = array![[0.1, 0.2], [0.5, -0.3], [1.0, 0.0]];
        let shared = array![0.7, -0.4, 0.25, 1.5];
        let mut full = Array2::zeros((3, 6));
        full.slice_mut(s![.., ..2]).assign(&varying);
        full.slice_mut(s![.., 2..]).assign(&shared.broadcast((3, 4)).unwrap());
        let y_full = net.forward(full.view()).unwrap();
        let y_split = net.forward_shared(varying.view(), shared.view()).unwrap();
        for (a, b) in y_full.iter().zip(y_split.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let up = Array2::from_elem((3, 3), 0.5);
        let (g_full, dx_full) = net.gradients(full.view(), up.view()).unwrap();
        let trace = net.forward_trace(varying.view(), shared.view()).unwrap();
        let (g_split, dv, ds) = net.backward(&trace, up.view()).unwrap();
        for ((wf, bf), (ws, bs)) in g_full.layers.iter().zip(&g_split.layers) {
            assert!(wf.iter().zip(ws.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
            assert!(bf.iter().zip(bs.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let ds_full = dx_full.slice(s![.., 2..]).sum_axis(Axis(0));
        assert!(ds.iter().zip(ds_full.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(dv.iter().zip(dx_full.slice(s![.., ..2]).iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn zero_last_layer_outputs_zero_when_narrowing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let init = MlpInit { zero_last: true, coord: None };
        let net: Mlp<f32> = Mlp::init(&[10, 16, 16, 16, 16, 16, 16, 16, 5], &init, &mut rng).unwrap();
        let x = Array2::from_elem((4, 10), 0.3f32);
        assert!(net.forward(x.view()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coord_init_centres_units_on_anchors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let anchor = vec![0.5, 0.8, -0.2, 0.9];
        let init = MlpInit {
            zero_last: false,
            coord: Some(CoordInit { n_coord: 4, scale: 40.0, anchors: vec![anchor.clone()] }),
        };
        let net: Mlp<f64> = Mlp::init(&[4, 32, 1], &init, &mut rng).unwrap();
        let l0 = &net.layers()[0];
        for k in 0..32 {
            let z: f64 = (0..4).map(|c| l0.weight[[k, c]] * anchor[c]).sum::<f64>() + l0.bias[k];
            assert!(z.abs() < 1e-9);
        }
    }
}
