//! The assimilation operator: per-source set encoders, a background encoder,
//! latent fusion with presence flags, and a coordinate-query decoder that
//! predicts analysis increments.

use ndarray::{s, Array1, Array2, Array3, ArrayView2};
use ndcore::checkpoint::Checkpoint;
use ndcore::{CoordInit, Mlp, MlpGrads, MlpInit, Real, Trace};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geo::{bilinear_sample, encode_coord, regrid_bilinear, GridField, GridSpec, ALL_VARS};
use crate::obs::{validate_schemas, ObservationSet, SourceId, SourceSchema};
use crate::partition::{partition_domain, stitch, PatchSpec};
use crate::{Error, Result};

/// Background and analysis variable count.
pub const N_VARS: usize = 5;
pub const COORD_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub encoder_width: usize,
    pub decoder_width: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    /// Std of first-layer coordinate weights.
    pub encoder_coord_scale: f64,
    pub decoder_coord_scale: f64,
    pub patch_deg: (f64, f64),
    pub overlap_deg: (f64, f64),
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            encoder_width: 32,
            decoder_width: 64,
            encoder_depth: 6,
            decoder_depth: 8,
            encoder_coord_scale: 10.0,
            decoder_coord_scale: 10.0,
            patch_deg: (4.0, 4.0),
            overlap_deg: (2.0, 2.0),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.encoder_width == 0 || self.decoder_width == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.encoder_depth == 0 || self.decoder_depth == 0 {
            return Err(Error::Config("model depths must be positive".into()));
        }
        if !(self.encoder_coord_scale >= 0.0 && self.decoder_coord_scale >= 0.0) {
            return Err(Error::Config("coordinate init scales must be >= 0".into()));
        }
        Ok(())
    }
}

/// Mean and standard deviation of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub const IDENTITY: Moments = Moments { mean: 0.0, std: 1.0 };

    pub fn normalize(self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    /// Background variables in `ALL_VARS` order.
    pub background: Vec<Moments>,
    /// Per schema, per public channel. Direction channels are not scaled.
    pub sources: Vec<Vec<Moments>>,
    /// Increment scale per variable; increments are divided by it without centring.
    pub increment_scale: Vec<f64>,
    /// Inclusive day range the statistics were fitted on.
    pub fit_days: (i64, i64),
}

impl NormStats {
    pub fn identity(schemas: &[SourceSchema]) -> Self {
        Self {
            background: vec![Moments::IDENTITY; N_VARS],
            sources: schemas.iter().map(|s| vec![Moments::IDENTITY; s.channel_count()]).collect(),
            increment_scale: vec![1.0; N_VARS],
            fit_days: (0, 0),
        }
    }

    pub fn validate(&self, schemas: &[SourceSchema]) -> Result<()> {
        let bad = |m: &Moments| !(m.std > 0.0 && m.std.is_finite() && m.mean.is_finite());
        if self.background.len() != N_VARS || self.increment_scale.len() != N_VARS {
            return Err(Error::Schema("normalization needs 5 background and 5 increment entries".into()));
        }
        if self.sources.len() != schemas.len()
            || self.sources.iter().zip(schemas).any(|(m, s)| m.len() != s.channel_count())
        {
            return Err(Error::Schema("normalization does not match the source schemas".into()));
        }
        if self.background.iter().chain(self.sources.iter().flatten()).any(bad)
            || self.increment_scale.iter().any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::Config("normalization scales must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Encoder input features per point for a source (direction expands to sin, cos).
pub fn feature_width(id: SourceId) -> usize {
    match id {
        SourceId::Ssw => 3,
        other => other.channels().len(),
    }
}

/// Observation channels minus the background at each point, for every
/// point whose background neighbourhood has ocean. Returns the point index
/// and its departures. Wind direction, sea-ice concentration and sea-level
/// anomaly pass through unchanged.
pub fn departures(obs: &ObservationSet, background: &GridField) -> Result<Vec<(usize, Vec<f64>)>> {
    if background.vars != ALL_VARS {
        return Err(Error::Schema("background must carry T, S, U, V, SSH".into()));
    }
    let bg = bilinear_sample(background, &obs.coords)?;
    let mut out = Vec::with_capacity(obs.len());
    for (p, b) in bg.into_iter().enumerate() {
        let Some(b) = b else { continue };
        let v = obs.values.row(p);
        let d = match obs.source {
            SourceId::Sst => vec![v[0] - b[0]],
            SourceId::Sss => vec![v[0] - b[1]],
            SourceId::Ssw => vec![v[0] - b[2].hypot(b[3]), v[1]],
            SourceId::Insitu => vec![v[0] - b[0], v[1] - b[1]],
            SourceId::Sic | SourceId::Sla => v.to_vec(),
        };
        out.push((p, d));
    }
    Ok(out)
}

/// A pooled set summary.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeature<T> {
    pub vector: Vec<T>,
    pub present: bool,
}

impl<T: Real> LatentFeature<T> {
    pub fn absent(d: usize) -> Self {
        Self { vector: vec![T::from_f64(0.0); d], present: false }
    }
}

/// Column means of `emb`, invariant under row permutation and under
/// replicating every row the same number of times, bit for bit.
///
/// Each column is sorted, equal values are grouped, and `value × count`
/// terms are summed in sorted order. Replication scales every count by the
/// same integer, so every partial sum and the final quotient are unchanged.
pub fn set_mean<T: Real>(emb: ArrayView2<T>) -> Vec<T> {
    let n = emb.nrows();
    let mut col: Vec<f64> = Vec::with_capacity(n);
    (0..emb.ncols())
        .map(|c| {
            col.clear();
            col.extend(emb.column(c).iter().map(|v| v.to_f64()));
            col.sort_by(f64::total_cmp);
            let mut acc = 0.0f64;
            let mut i = 0;
            while i < n {
                let v = col[i];
                let mut j = i + 1;
                while j < n && col[j].to_bits() == v.to_bits() {
                    j += 1;
                }
                acc += v * (j - i) as f64;
                i = j;
            }
            T::from_f64(acc / n as f64)
        })
        .collect()
}

/// Per-point embedding followed by mean pooling. An empty set gives the
/// absent latent without evaluating the encoder.
pub fn encode_source<T: Real>(encoder: &Mlp<T>, points: ArrayView2<T>) -> Result<LatentFeature<T>> {
    if points.ncols() != encoder.in_dim() {
        return Err(Error::Schema(format!(
            "encoder expects {} features per point, got {}",
            encoder.in_dim(),
            points.ncols()
        )));
    }
    if points.nrows() == 0 {
        return Ok(LatentFeature::absent(encoder.out_dim()));
    }
    let emb = encoder.forward(points)?;
    Ok(LatentFeature { vector: set_mean(emb.view()), present: true })
}

/// `[background | flag | source_1 | flag | ...]`.
pub fn fuse<T: Real>(background: &LatentFeature<T>, sources: &[LatentFeature<T>], n_sources: usize) -> Result<Vec<T>> {
    if sources.len() != n_sources {
        return Err(Error::Schema(format!("expected {n_sources} source latents, got {}", sources.len())));
    }
    let d = background.vector.len();
    let mut out = Vec::with_capacity((n_sources + 1) * (d + 1));
    for l in std::iter::once(background).chain(sources) {
        if l.vector.len() != d {
            return Err(Error::Schema("latent widths differ".into()));
        }
        out.extend_from_slice(&l.vector);
        out.push(T::from_f64(if l.present { 1.0 } else { 0.0 }));
    }
    Ok(out)
}

/// Normalized increments at each query row (`q × 4` encoded coordinates).
pub fn decode<T: Real>(decoder: &Mlp<T>, queries: ArrayView2<T>, fused: &[T]) -> Result<Array2<T>> {
    if queries.ncols() != COORD_DIM || COORD_DIM + fused.len() != decoder.in_dim() {
        return Err(Error::Schema(format!(
            "decoder expects {} inputs, got {} + {}",
            decoder.in_dim(),
            queries.ncols(),
            fused.len()
        )));
    }
    Ok(decoder.forward_shared(queries, ndarray::ArrayView1::from(fused))?)
}

/// Encoded coordinates as a `n × 4` array.
pub fn coord_rows<T: Real>(coords: &[(f64, f64)]) -> Result<Array2<T>> {
    let mut out = Array2::zeros((coords.len(), COORD_DIM));
    for (r, &(lat, lon)) in coords.iter().enumerate() {
        for (c, v) in encode_coord(lat, lon)?.to_array().into_iter().enumerate() {
            out[[r, c]] = T::from_f64(v);
        }
    }
    Ok(out)
}

/// Encoder inputs for one patch; a source with zero rows is absent.
#[derive(Debug, Clone)]
pub struct PatchInputs<T> {
    pub background: Array2<T>,
    pub sources: Vec<Array2<T>>,
}

#[derive(Debug, Clone)]
pub struct AssimModel<T = f32> {
    pub config: ModelConfig,
    pub schemas: Vec<SourceSchema>,
    pub norm: NormStats,
    pub background_encoder: Mlp<T>,
    pub source_encoders: Vec<Mlp<T>>,
    pub decoder: Mlp<T>,
}

/// Parameter gradients in the same layout as [`AssimModel`].
#[derive(Debug, Clone)]
pub struct ModelGrads<T> {
    pub background_encoder: MlpGrads<T>,
    pub source_encoders: Vec<MlpGrads<T>>,
    pub decoder: MlpGrads<T>,
}

impl<T: Real> ModelGrads<T> {
    pub fn zeros_like(m: &AssimModel<T>) -> Self {
        Self {
            background_encoder: MlpGrads::zeros_like(&m.background_encoder),
            source_encoders: m.source_encoders.iter().map(MlpGrads::zeros_like).collect(),
            decoder: MlpGrads::zeros_like(&m.decoder),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.background_encoder.add_assign(&other.background_encoder);
        for (a, b) in self.source_encoders.iter_mut().zip(&other.source_encoders) {
            a.add_assign(b);
        }
        self.decoder.add_assign(&other.decoder);
    }

    pub fn scale(&mut self, f: T) {
        self.background_encoder.scale(f);
        self.source_encoders.iter_mut().for_each(|g| g.scale(f));
        self.decoder.scale(f);
    }

    /// Flattened in [`AssimModel::param_slices_mut`] order.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut v = self.background_encoder.slices();
        for g in &self.source_encoders {
            v.extend(g.slices());
        }
        v.extend(self.decoder.slices());
        v
    }
}

/// Cached activations of one patch forward pass.
pub struct PatchTrace<T> {
    background: Option<(Trace<T>, usize)>,
    sources: Vec<Option<(Trace<T>, usize)>>,
    decoder: Trace<T>,
}

impl<T: Real> PatchTrace<T> {
    pub fn output(&self) -> &Array2<T> {
        self.decoder.output()
    }
}

fn encoder_dims(input: usize, width: usize, depth: usize, out: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(width, depth - 1));
    dims.push(out);
    dims
}

impl<T: Real> AssimModel<T> {
    /// Fresh weights. `anchors` are encoded coordinates spread over the
    /// domain, used to place first-layer coordinate features.
    pub fn init<R: Rng + ?Sized>(
        config: ModelConfig,
        schemas: Vec<SourceSchema>,
        norm: NormStats,
        anchors: Vec<Vec<f64>>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        validate_schemas(&schemas)?;
        norm.validate(&schemas)?;
        let d = config.latent_dim;
        let coord = |scale: f64| {
            (scale > 0.0 && !anchors.is_empty()).then(|| CoordInit { n_coord: COORD_DIM, scale, anchors: anchors.clone() })
        };
        let enc_init = MlpInit { zero_last: false, coord: coord(config.encoder_coord_scale) };
        let enc = |f: usize, rng: &mut R| {
            Mlp::init(&encoder_dims(COORD_DIM + f, config.encoder_width, config.encoder_depth, d), &enc_init, rng)
        };
        let background_encoder = enc(N_VARS, rng)?;
        let mut source_encoders = Vec::with_capacity(schemas.len());
        for s in &schemas {
            source_encoders.push(enc(feature_width(s.id), rng)?);
        }
        let dec_in = COORD_DIM + (schemas.len() + 1) * (d + 1);
        let dec_init = MlpInit { zero_last: true, coord: coord(config.decoder_coord_scale) };
        let decoder =
            Mlp::init(&encoder_dims(dec_in, config.decoder_width, config.decoder_depth, N_VARS), &dec_init, rng)?;
        Ok(Self { config, schemas, norm, background_encoder, source_encoders, decoder })
    }

    pub fn param_count(&self) -> usize {
        self.background_encoder.param_count()
            + self.source_encoders.iter().map(Mlp::param_count).sum::<usize>()
            + self.decoder.param_count()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.background_encoder.param_slices_mut();
        for m in &mut self.source_encoders {
            v.extend(m.param_slices_mut());
        }
        v.extend(self.decoder.param_slices_mut());
        v
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut v = self.background_encoder.param_slices();
        for m in &self.source_encoders {
            v.extend(m.param_slices());
        }
        v.extend(self.decoder.param_slices());
        v
    }

    pub fn cast<U: Real>(&self) -> AssimModel<U> {
        AssimModel {
            config: self.config.clone(),
            schemas: self.schemas.clone(),
            norm: self.norm.clone(),
            background_encoder: self.background_encoder.cast(),
            source_encoders: self.source_encoders.iter().map(Mlp::cast).collect(),
            decoder: self.decoder.cast(),
        }
    }

    pub fn source_index(&self, id: SourceId) -> Result<usize> {
        self.schemas
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::Schema(format!("source {id} is not in the model's schema list")))
    }

    /// Background points: coarse ocean cells whose centres lie in the patch.
    pub fn background_features(&self, background: &GridField, patch: &PatchSpec) -> Result<Array2<T>> {
        if background.vars != ALL_VARS {
            return Err(Error::Schema("background must carry T, S, U, V, SSH".into()));
        }
        let spec = &background.spec;
        let mut rows: Vec<T> = Vec::new();
        let mut n = 0;
        for i in 0..spec.nlat() {
            let lat = spec.lat_center(i);
            if lat < patch.lat0 || lat >= patch.lat1 {
                continue;
            }
            for j in 0..spec.nlon() {
                let lon = spec.lon_center(j);
                if !background.mask[[i, j]] || !patch.contains(lat, lon) {
                    continue;
                }
                rows.extend(encode_coord(lat, lon)?.to_array().map(T::from_f64));
                for k in 0..N_VARS {
                    rows.push(T::from_f64(self.norm.background[k].normalize(background.values[[i, j, k]])));
                }
                n += 1;
            }
        }
        Ok(Array2::from_shape_vec((n, COORD_DIM + N_VARS), rows).expect("row-major features"))
    }

    /// Points of source `j` inside the patch, as normalized departures
    /// from the background.
    pub fn source_features(
        &self,
        j: usize,
        obs: &ObservationSet,
        background: &GridField,
        patch: &PatchSpec,
    ) -> Result<Array2<T>> {
        let schema = &self.schemas[j];
        if obs.source != schema.id {
            return Err(Error::Schema(format!("expected {} observations, got {}", schema.id, obs.source)));
        }
        let width = COORD_DIM + feature_width(schema.id);
        let moments = &self.norm.sources[j];
        let inside: Vec<usize> = (0..obs.len()).filter(|&p| patch.contains(obs.coords[p].0, obs.coords[p].1)).collect();
        let dep = departures(&obs.subset(&inside), background)?;
        let mut rows: Vec<T> = Vec::with_capacity(dep.len() * width);
        for (p, v) in &dep {
            let (lat, lon) = obs.coords[inside[*p]];
            rows.extend(encode_coord(lat, lon)?.to_array().map(T::from_f64));
            if schema.id == SourceId::Ssw {
                let (sin, cos) = v[1].sin_cos();
                rows.extend([moments[0].normalize(v[0]), sin, cos].map(T::from_f64));
            } else {
                rows.extend(v.iter().zip(moments).map(|(&x, m)| T::from_f64(m.normalize(x))));
            }
        }
        Ok(Array2::from_shape_vec((dep.len(), width), rows).expect("row-major features"))
    }

    /// Encoder inputs for one patch. `obs` may list any subset of the
    /// schema sources in any order; missing sources are absent.
    pub fn patch_inputs(&self, background: &GridField, obs: &[&ObservationSet], patch: &PatchSpec) -> Result<PatchInputs<T>> {
        let mut sources = Vec::with_capacity(self.schemas.len());
        for (j, s) in self.schemas.iter().enumerate() {
            let mut found = obs.iter().filter(|o| o.source == s.id);
            let feats = match found.next() {
                Some(o) => self.source_features(j, o, background, patch)?,
                None => Array2::zeros((0, COORD_DIM + feature_width(s.id))),
            };
            if found.next().is_some() {
                return Err(Error::Schema(format!("{} observations given twice", s.id)));
            }
            sources.push(feats);
        }
        for o in obs {
            self.source_index(o.source)?;
        }
        Ok(PatchInputs { background: self.background_features(background, patch)?, sources })
    }

    pub fn latents(&self, inputs: &PatchInputs<T>) -> Result<(LatentFeature<T>, Vec<LatentFeature<T>>)> {
        let bg = encode_source(&self.background_encoder, inputs.background.view())?;
        let src = self
            .source_encoders
            .iter()
            .zip(&inputs.sources)
            .map(|(e, p)| encode_source(e, p.view()))
            .collect::<Result<Vec<_>>>()?;
        Ok((bg, src))
    }

    /// Normalized increments at `queries` for one patch.
    pub fn predict(&self, inputs: &PatchInputs<T>, queries: ArrayView2<T>) -> Result<Array2<T>> {
        let (bg, src) = self.latents(inputs)?;
        let fused = fuse(&bg, &src, self.schemas.len())?;
        decode(&self.decoder, queries, &fused)
    }

    fn encode_traced(enc: &Mlp<T>, points: &Array2<T>) -> Result<(LatentFeature<T>, Option<(Trace<T>, usize)>)> {
        if points.nrows() == 0 {
            return Ok((LatentFeature::absent(enc.out_dim()), None));
        }
        let empty = Array1::<T>::zeros(0);
        let tr = enc.forward_trace(points.view(), empty.view())?;
        let lat = LatentFeature { vector: set_mean(tr.output().view()), present: true };
        Ok((lat, Some((tr, points.nrows()))))
    }

    pub fn forward_trace(&self, inputs: &PatchInputs<T>, queries: ArrayView2<T>) -> Result<PatchTrace<T>> {
        let (bg, bg_tr) = Self::encode_traced(&self.background_encoder, &inputs.background)?;
        let mut lats = Vec::with_capacity(self.schemas.len());
        let mut trs = Vec::with_capacity(self.schemas.len());
        for (e, p) in self.source_encoders.iter().zip(&inputs.sources) {
            let (l, t) = Self::encode_traced(e, p)?;
            lats.push(l);
            trs.push(t);
        }
        let fused = fuse(&bg, &lats, self.schemas.len())?;
        if queries.ncols() != COORD_DIM {
            return Err(Error::Schema("queries must be encoded coordinates".into()));
        }
        let decoder = self.decoder.forward_trace(queries, ndarray::ArrayView1::from(&fused[..]))?;
        Ok(PatchTrace { background: bg_tr, sources: trs, decoder })
    }

    /// Reverse pass from the gradient of the loss with respect to the
    /// decoder output.
    pub fn backward(&self, trace: &PatchTrace<T>, upstream: ArrayView2<T>) -> Result<ModelGrads<T>> {
        let (dec_g, _, d_fused) = self.decoder.backward(&trace.decoder, upstream)?;
        let d = self.config.latent_dim;
        let block_grad = |enc: &Mlp<T>, tr: &Option<(Trace<T>, usize)>, b: usize| -> Result<MlpGrads<T>> {
            match tr {
                None => Ok(MlpGrads::zeros_like(enc)),
                Some((t, n)) => {
                    let inv = T::from_f64(1.0 / *n as f64);
                    let dl = d_fused.slice(s![b * (d + 1)..b * (d + 1) + d]).mapv(|g| g * inv);
                    let up = dl.broadcast((*n, d)).expect("latent width").to_owned();
                    Ok(enc.backward(t, up.view())?.0)
                }
            }
        };
        let background_encoder = block_grad(&self.background_encoder, &trace.background, 0)?;
        let source_encoders = self
            .source_encoders
            .iter()
            .zip(&trace.sources)
            .enumerate()
            .map(|(j, (e, t))| block_grad(e, t, j + 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelGrads { background_encoder, source_encoders, decoder: dec_g })
    }

    pub fn patches(&self, target: &GridSpec) -> Result<Vec<PatchSpec>> {
        partition_domain(target, self.config.patch_deg, self.config.overlap_deg)
    }

    /// Fine analysis: interpolated background plus the stitched,
    /// denormalized increments. Patches run on the rayon pool.
    pub fn assimilate(
        &self,
        background: &GridField,
        obs: &[&ObservationSet],
        target: &GridSpec,
        target_mask: &ndarray::Array2<bool>,
    ) -> Result<GridField> {
        for o in obs {
            if o.day != background.day {
                return Err(Error::Schema(format!(
                    "{} observations are for day {}, background for day {}",
                    o.source, o.day, background.day
                )));
            }
        }
        let interp = regrid_bilinear(background, target, target_mask)?;
        let patches = self.patches(target)?;
        let outputs = patches
            .par_iter()
            .map(|p| -> Result<(PatchSpec, Array3<f64>)> {
                let inputs = self.patch_inputs(background, obs, p)?;
                let cells: Vec<(usize, usize)> = p.cells().filter(|&(i, j)| target_mask[[i, j]]).collect();
                let coords: Vec<(f64, f64)> =
                    cells.iter().map(|&(i, j)| (target.lat_center(i), target.lon_center(j))).collect();
                let mut out = Array3::zeros((p.nrows, p.ncols, N_VARS));
                if !cells.is_empty() {
                    let pred = self.predict(&inputs, coord_rows::<T>(&coords)?.view())?;
                    for (r, &(i, j)) in cells.iter().enumerate() {
                        for k in 0..N_VARS {
                            out[[i - p.row0, j - p.col0, k]] = pred[[r, k]].to_f64() * self.norm.increment_scale[k];
                        }
                    }
                }
                Ok((p.clone(), out))
            })
            .collect::<Result<Vec<_>>>()?;
        let inc = stitch(&outputs, target, &ALL_VARS, target_mask, background.day)?;
        let mut values = interp.values.clone();
        values += &inc.values;
        let analysis = GridField::new(target.clone(), ALL_VARS.to_vec(), values, target_mask.clone(), background.day)?;
        if analysis.values.iter().zip(target_mask.iter().flat_map(|&m| [m; N_VARS])).any(|(v, m)| m && !v.is_finite()) {
            return Err(Error::Numerical("analysis has non-finite ocean values".into()));
        }
        Ok(analysis)
    }

    pub fn to_checkpoint(&self, config_hash: &str, world_hash: &str) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(config_hash);
        ck.push_mlp("background_encoder", &self.background_encoder);
        for (s, m) in self.schemas.iter().zip(&self.source_encoders) {
            ck.push_mlp(&format!("encoder.{}", s.id), m);
        }
        ck.push_mlp("decoder", &self.decoder);
        let toml_err = |e: toml::ser::Error| Error::Format(format!("cannot serialize model metadata: {e}"));
        ck.meta.insert("model.config".into(), toml::to_string(&self.config).map_err(toml_err)?);
        ck.meta.insert(
            "model.schemas".into(),
            toml::to_string(&SchemaList { sources: self.schemas.clone() }).map_err(toml_err)?,
        );
        ck.meta.insert("model.norm".into(), toml::to_string(&self.norm).map_err(toml_err)?);
        ck.meta.insert("world_hash".into(), world_hash.to_string());
        Ok(ck)
    }

    /// Rebuilds a model, refusing a checkpoint made for a different world.
    pub fn from_checkpoint(ck: &Checkpoint, world_hash: Option<&str>) -> Result<Self> {
        if let Some(h) = world_hash {
            let stored = ck.meta("world_hash")?;
            if stored != h {
                return Err(Error::Config(format!("checkpoint was trained on world {stored}, not {h}")));
            }
        }
        let de = |key: &str| -> Result<&str> { Ok(ck.meta(key)?) };
        let toml_err = |e: toml::de::Error| Error::Format(format!("bad model metadata: {e}"));
        let config: ModelConfig = toml::from_str(de("model.config")?).map_err(toml_err)?;
        let schemas = toml::from_str::<SchemaList>(de("model.schemas")?).map_err(toml_err)?.sources;
        let norm: NormStats = toml::from_str(de("model.norm")?).map_err(toml_err)?;
        config.validate()?;
        validate_schemas(&schemas)?;
        norm.validate(&schemas)?;
        let background_encoder = ck.read_mlp("background_encoder")?;
        let source_encoders =
            schemas.iter().map(|s| ck.read_mlp(&format!("encoder.{}", s.id))).collect::<ndcore::Result<Vec<_>>>()?;
        let decoder = ck.read_mlp("decoder")?;
        let m = Self { config, schemas, norm, background_encoder, source_encoders, decoder };
        m.check_shapes()?;
        Ok(m)
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.config.latent_dim;
        let ok_enc = |m: &Mlp<T>, f: usize| m.in_dim() == COORD_DIM + f && m.out_dim() == d;
        if !ok_enc(&self.background_encoder, N_VARS)
            || self.source_encoders.len() != self.schemas.len()
            || self.source_encoders.iter().zip(&self.schemas).any(|(m, s)| !ok_enc(m, feature_width(s.id)))
            || self.decoder.in_dim() != COORD_DIM + (self.schemas.len() + 1) * (d + 1)
            || self.decoder.out_dim() != N_VARS
        {
            return Err(Error::Schema("checkpoint networks do not match the model layout".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaList {
    sources: Vec<SourceSchema>,
}

/// Encoded coordinates of every `step`-th cell centre, for coordinate init.
pub fn domain_anchors(spec: &GridSpec, step: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for i in (0..spec.nlat()).step_by(step.max(1)) {
        for j in (0..spec.nlon()).step_by(step.max(1)) {
            out.push(encode_coord(spec.lat_center(i), spec.lon_center(j))?.to_array().to_vec());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{World, WorldConfig};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(seed: u64) -> AssimModel<f64> {
        let schemas = SourceSchema::defaults();
        let cfg = ModelConfig { latent_dim: 8, encoder_width: 8, decoder_width: 16, ..ModelConfig::default() };
        let norm = NormStats::identity(&schemas);
        let spec = GridSpec::new((20.0, 60.0), (140.0, 220.0), 2.0, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AssimModel::init(cfg, schemas, norm, domain_anchors(&spec, 3).unwrap(), &mut rng).unwrap()
    }

    #[test]
    fn fuse_example() {
        let bg = LatentFeature { vector: vec![1.0, 2.0], present: true };
        let src = LatentFeature { vector: vec![3.0, 4.0], present: true };
        assert_eq!(fuse(&bg, &[src.clone()], 1).unwrap(), vec![1.0, 2.0, 1.0, 3.0, 4.0, 1.0]);
        assert_eq!(fuse(&bg, &[LatentFeature::absent(2)], 1).unwrap(), vec![1.0, 2.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(fuse(&bg, &[src.clone(), src], 1).is_err());
    }

    #[test]
    fn set_mean_is_exactly_symmetric() {
        let x = array![[0.1f32, 1e7], [0.7, -3.0], [0.2, 1e-3], [0.3, 0.5]];
        let m = set_mean(x.view());
        let perm = array![[0.3f32, 0.5], [0.1, 1e7], [0.2, 1e-3], [0.7, -3.0]];
        assert_eq!(set_mean(perm.view()), m);
        let dup = ndarray::concatenate![ndarray::Axis(0), x, x, x];
        assert_eq!(set_mean(dup.view()), m);
    }

    #[test]
    fn zero_decoder_reproduces_interpolated_background() {
        let w = World::new(WorldConfig { days: 6, ..WorldConfig::default() }).unwrap();
        let bg = w.make_background(5, 3, &Default::default(), 1).unwrap();
        let m = small_model(3);
        let a = m.assimilate(&bg, &[], &w.fine, &w.fine_mask).unwrap();
        let interp = regrid_bilinear(&bg, &w.fine, &w.fine_mask).unwrap();
        assert_eq!(a.mask, interp.mask);
        for (x, y) in a.values.iter().zip(interp.values.iter()) {
            assert!(x == y || (x.is_nan() && y.is_nan()));
        }
    }

    #[test]
    fn param_count_is_independent_of_target_grid() {
        let w = World::new(WorldConfig { days: 6, ..WorldConfig::default() }).unwrap();
        let m = small_model(4);
        let bg = w.make_background(5, 3, &Default::default(), 1).unwrap();
        let coarse = m.assimilate(&bg, &[], &w.coarse, &w.coarse_mask).unwrap();
        let fine = m.assimilate(&bg, &[], &w.fine, &w.fine_mask).unwrap();
        assert_eq!(coarse.spec, w.coarse);
        assert_eq!(fine.spec, w.fine);
        let n = m.param_count();
        let direct: usize = m.param_slices().iter().map(|s| s.len()).sum();
        assert_eq!(n, direct);
    }

    #[test]
    fn absent_source_is_flag_zero_and_skips_encoder() {
        let m = small_model(5);
        let empty = Array2::<f64>::zeros((0, COORD_DIM + 1));
        let l = encode_source(&m.source_encoders[0], empty.view()).unwrap();
        assert_eq!(l, LatentFeature::absent(8));
        let wrong = Array2::<f64>::zeros((3, COORD_DIM + 2));
        assert!(matches!(encode_source(&m.source_encoders[0], wrong.view()), Err(Error::Schema(_))));
    }

    #[test]
    fn decoder_sees_the_fused_vector() {
        let mut m = small_model(6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for l in m.decoder.layers_mut() {
            l.weight.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let q = coord_rows::<f64>(&[(30.0, 150.0), (30.0, 150.0)]).unwrap();
        let fused: Vec<f64> = (0..m.decoder.in_dim() - COORD_DIM).map(|k| (k as f64 * 0.37).sin()).collect();
        let a = decode(&m.decoder, q.view(), &fused).unwrap();
        assert_eq!(a.row(0), a.row(1));
        let mut other = fused.clone();
        other[5] += 0.5;
        let b = decode(&m.decoder, q.view(), &other).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small_model(7).cast::<f32>();
        let ck = m.to_checkpoint("cfg", "world-a").unwrap();
        let back = AssimModel::<f32>::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), Some("world-a")).unwrap();
        assert_eq!(back.param_slices(), m.param_slices());
        assert_eq!(back.schemas, m.schemas);
        assert_eq!(back.norm, m.norm);
        assert!(matches!(AssimModel::<f32>::from_checkpoint(&ck, Some("world-b")), Err(Error::Config(_))));
    }
}
