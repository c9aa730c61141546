use serde::{Deserialize, Serialize};

use super::config::{embedding_dim, ModelConfig};
use crate::alignment::{
    denormalize, residual_loss, smooth_target, AlignCache, Alignment, Mode, ResidualCache,
    ResidualNet,
};
use crate::cascade::{
    cascade_loss, distill_loss, CascadeHeads, CascadeOutput, DistillStats, DropoutKey, HeadsCache,
    DISTILL_SMOOTHING,
};
use crate::data::{BucketSpec, Column, ColumnKind, Dataset};
use crate::error::{LtvError, Result};
use crate::high_value::{augmentation_noise, high_value_loss, HighValueCache, HighValueNet};
use crate::nn::{Activation, Embedding, Matrix, Mlp, MlpCache, ParamId, ParamSet};
use crate::rng::{stream, tag};

/// Column layout the model was built for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
    pub cardinalities: Vec<usize>,
}

impl Schema {
    pub fn of(ds: &Dataset) -> Self {
        Schema {
            columns: ds.columns.clone(),
            cardinalities: ds.cardinalities.clone(),
        }
    }

    pub fn n_numeric(&self) -> usize {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Numeric).count()
    }

    /// Same columns in the same order, every code below the stored cardinality.
    pub fn check(&self, ds: &Dataset) -> Result<()> {
        if self.columns != ds.columns {
            let want: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
            let got: Vec<&str> = ds.columns.iter().map(|c| c.name.as_str()).collect();
            return Err(LtvError::Artifact(format!(
                "data columns {got:?} do not match checkpoint columns {want:?}"
            )));
        }
        for ((codes, &card), col) in ds
            .categorical
            .iter()
            .zip(&self.cardinalities)
            .zip(ds.columns.iter().filter(|c| c.kind == ColumnKind::Categorical))
        {
            if let Some(bad) = codes.iter().find(|&&c| c >= card) {
                return Err(LtvError::Artifact(format!(
                    "column {} has code {bad}, checkpoint cardinality is {card}",
                    col.name
                )));
            }
        }
        Ok(())
    }
}

/// A mini-batch with standardized numeric features.
#[derive(Debug, Clone)]
pub struct Batch {
    pub numeric: Matrix,
    pub categorical: Vec<Vec<usize>>,
    pub labels: Vec<f64>,
    /// Row numbers in the source dataset; key the augmentation noise.
    pub index: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub embeddings: Vec<Embedding>,
    pub mlp: Mlp,
    n_numeric: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    mlp: MlpCache,
}

impl Encoder {
    fn forward(&self, ps: &ParamSet, batch: &Batch) -> Result<(Matrix, EncoderCache)> {
        let mut parts = vec![batch.numeric.clone()];
        for (emb, codes) in self.embeddings.iter().zip(&batch.categorical) {
            parts.push(emb.lookup(ps, codes)?);
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        let input = Matrix::hconcat(&refs)?;
        let mlp = self.mlp.forward(ps, &input, None)?;
        Ok((mlp.output().clone(), EncoderCache { mlp }))
    }

    fn backward(&self, ps: &mut ParamSet, cache: &EncoderCache, batch: &Batch, dh: &Matrix) {
        let need = !self.embeddings.is_empty();
        let dx = self.mlp.backward(ps, &cache.mlp, dh, need);
        if let Some(dx) = dx {
            let mut widths = vec![self.n_numeric];
            widths.extend(self.embeddings.iter().map(|e| e.dim));
            let parts = dx.hsplit(&widths);
            for ((emb, codes), d) in self.embeddings.iter().zip(&batch.categorical).zip(&parts[1..]) {
                emb.backward(ps, codes, d);
            }
        }
    }
}

/// Weights of each loss term in the optimized objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub baseline: f64,
    pub cascade: f64,
    pub distill: f64,
    pub residual: f64,
    pub high_value: f64,
    pub l2: f64,
}

impl ObjectiveWeights {
    pub const NONE: ObjectiveWeights = ObjectiveWeights {
        baseline: 0.0,
        cascade: 0.0,
        distill: 0.0,
        residual: 0.0,
        high_value: 0.0,
        l2: 0.0,
    };

    /// `γ·L_main + (1−γ)·L_high_value`, plus the head L2 penalty when `with_l2`.
    pub fn training(cfg: &ModelConfig, with_l2: bool) -> Self {
        let g = cfg.loss.gamma;
        let f = cfg.stages;
        let on = |b: bool| if b { 1.0 } else { 0.0 };
        ObjectiveWeights {
            baseline: g * on(!f.cascade),
            cascade: g * cfg.loss.alpha_cascade * on(f.cascade),
            distill: g * cfg.loss.alpha_distill * on(f.distill),
            residual: g * cfg.loss.alpha_residual * on(f.residual),
            high_value: (1.0 - g) * on(f.augment),
            l2: on(with_l2 && f.cascade),
        }
    }
}

/// Loss terms of one forward pass. Each field is the unweighted mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub baseline: f64,
    pub cascade: f64,
    pub distill: f64,
    pub residual: f64,
    /// Mean over the samples predicted in the top bucket; 0 when there are none.
    pub high_value: f64,
    pub n_high: usize,
    pub l2: f64,
    /// `γ·L_main + (1−γ)·L_high_value` (no L2).
    pub total: f64,
    /// The weighted objective actually differentiated.
    pub objective: f64,
}

/// Values held constant across stop-gradient boundaries. Captured at a
/// reference point so finite differences see the same detached inputs.
#[derive(Debug, Clone)]
pub struct Frozen {
    pub h_distill: Matrix,
    pub p_align: Option<Matrix>,
    pub buckets: Option<Vec<usize>>,
    pub high_rows: Vec<usize>,
    pub h_high: Option<Matrix>,
    pub e_high: Option<Matrix>,
}

/// Per-step settings of a loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct StepContext {
    pub step: u64,
    pub train: bool,
    pub theta: f64,
    pub temperature: f64,
    pub weights: ObjectiveWeights,
    pub capture: bool,
}

pub struct LossForward {
    pub breakdown: LossBreakdown,
    pub frozen: Option<Frozen>,
    pub distill_stats: Option<DistillStats>,
    enc: EncoderCache,
    base: Option<(MlpCache, Vec<f64>)>,
    heads: Option<(HeadsCache, Matrix)>,
    distill: Option<(HeadsCache, Matrix, bool)>,
    residual: Option<(AlignCache, ResidualCache, Vec<f64>)>,
    high: Option<(HighValueCache, Vec<f64>, Vec<f64>)>,
    weights: ObjectiveWeights,
}

/// How a prediction was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Predicted zero bucket; output exactly 0.
    Zero,
    /// Denormalized residual output.
    Residual,
    /// Bucket center (cascade without the residual module).
    Center,
    /// Top-bucket head.
    Whale,
    /// Baseline regression head.
    Direct,
}

/// Inference outputs for one batch.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub h_shared: Matrix,
    pub cascade: Option<CascadeOutput>,
    pub v_norm: Option<Vec<f64>>,
    pub v_high: Vec<Option<f64>>,
    pub p_conf: Vec<Option<f64>>,
    pub buckets: Vec<usize>,
    pub v_final: Vec<f64>,
    pub route: Vec<Route>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub cfg: ModelConfig,
    pub schema: Schema,
    pub spec: BucketSpec,
    pub tau_low: f64,
    pub num_mean: ParamId,
    pub num_std: ParamId,
    pub encoder: Encoder,
    pub baseline: Option<Mlp>,
    pub cascade: Option<CascadeHeads>,
    pub alignment: Option<Alignment>,
    pub residual: Option<ResidualNet>,
    pub high: Option<HighValueNet>,
}

mod init_tag {
    pub const ENCODER: u64 = 1;
    pub const BASELINE: u64 = 2;
    pub const CASCADE: u64 = 3;
    pub const ALIGNMENT: u64 = 4;
    pub const RESIDUAL: u64 = 5;
    pub const HIGH_VALUE: u64 = 6;
}

impl Network {
    /// Creates all parameters. Each module draws from its own stream, so the
    /// shared encoder starts identical across ablation stages.
    pub fn build(
        cfg: ModelConfig,
        schema: Schema,
        spec: BucketSpec,
        tau_low: f64,
        ps: &mut ParamSet,
    ) -> Result<Self> {
        cfg.validate()?;
        if spec.k() != cfg.k {
            return Err(LtvError::config(format!(
                "bucket spec has K = {}, config K = {}",
                spec.k(),
                cfg.k
            )));
        }
        let seed = cfg.seed;
        let init = |module: u64| stream(seed, &[tag::INIT, module]);
        let n_num = schema.n_numeric();
        let num_mean = ps.add_buffer("input.num_mean", Matrix::zeros(1, n_num));
        let num_std = ps.add_buffer("input.num_std", Matrix::filled(1, n_num, 1.0));

        let mut rng = init(init_tag::ENCODER);
        let mut in_dim = n_num;
        let mut embeddings = Vec::new();
        let cat_names = schema.columns.iter().filter(|c| c.kind == ColumnKind::Categorical);
        for (col, &card) in cat_names.zip(&schema.cardinalities) {
            let dim = embedding_dim(card);
            embeddings.push(Embedding::new(ps, &format!("encoder.embed.{}", col.name), card, dim, 0.01, &mut rng));
            in_dim += dim;
        }
        let mut dims = vec![in_dim];
        dims.extend(&cfg.encoder_hidden);
        let mlp = Mlp::new(ps, "encoder.mlp", &dims, Activation::Relu, Activation::Relu, 0.0, &mut rng);
        let encoder = Encoder {
            embeddings,
            mlp,
            n_numeric: n_num,
        };
        let h_dim = *cfg.encoder_hidden.last().expect("validated");

        let f = cfg.stages;
        let baseline = (!f.cascade).then(|| {
            Mlp::new(
                ps,
                "baseline",
                &[h_dim, cfg.baseline_hidden, 1],
                Activation::Relu,
                Activation::Softplus,
                0.0,
                &mut init(init_tag::BASELINE),
            )
        });
        let cascade = f
            .cascade
            .then(|| CascadeHeads::new(ps, "cascade", h_dim, &cfg.cascade, &mut init(init_tag::CASCADE)));
        let alignment = f
            .residual
            .then(|| Alignment::new(ps, "align", h_dim, cfg.k, &cfg.alignment, &mut init(init_tag::ALIGNMENT)));
        let residual = alignment.as_ref().map(|a| {
            ResidualNet::new(ps, "residual", a.out_dim(), cfg.alignment.residual_dims, &mut init(init_tag::RESIDUAL))
        });
        let high = f.augment.then(|| {
            HighValueNet::new(
                ps,
                "high_value",
                h_dim,
                cfg.alignment.embed_dim,
                &cfg.high_value,
                &mut init(init_tag::HIGH_VALUE),
            )
        });
        if let Some(h) = &high {
            h.init_output(ps, spec.centers[spec.top()]);
        }
        Ok(Network {
            cfg,
            schema,
            spec,
            tau_low,
            num_mean,
            num_std,
            encoder,
            baseline,
            cascade,
            alignment,
            residual,
            high,
        })
    }

    pub fn top(&self) -> usize {
        self.cfg.k - 1
    }

    /// Stores per-column mean and standard deviation (1 for constant columns).
    pub fn fit_standardizer(&self, ps: &mut ParamSet, ds: &Dataset) {
        let (n, d) = ds.numeric.shape();
        let mut mean = Matrix::zeros(1, d);
        let mut std = Matrix::filled(1, d, 1.0);
        for j in 0..d {
            let col = ds.numeric.col_values(j);
            let m = col.iter().sum::<f64>() / n.max(1) as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n.max(1) as f64;
            mean.set(0, j, m);
            if var > 0.0 {
                std.set(0, j, var.sqrt());
            }
        }
        *ps.value_mut(self.num_mean) = mean;
        *ps.value_mut(self.num_std) = std;
    }

    pub fn standardize(&self, ps: &ParamSet, numeric: &Matrix) -> Matrix {
        let mean = ps.value(self.num_mean).data();
        let std = ps.value(self.num_std).data();
        let mut out = numeric.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(mean).zip(std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    /// Rows `idx` of a dataset whose numeric block is already standardized.
    pub fn batch(&self, ds: &Dataset, standardized: &Matrix, idx: &[usize]) -> Batch {
        Batch {
            numeric: standardized.select_rows(idx),
            categorical: ds.categorical.iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect(),
            labels: idx.iter().map(|&i| ds.labels[i]).collect(),
            index: idx.to_vec(),
        }
    }

    /// Evaluates every active loss term. In training mode dropout, label
    /// smoothing and augmentation noise are on and batch norm uses batch
    /// statistics; `frozen` replaces the detached tensors when given.
    pub fn forward_loss(
        &self,
        ps: &ParamSet,
        batch: &Batch,
        ctx: &StepContext,
        frozen: Option<&Frozen>,
    ) -> Result<LossForward> {
        let cfg = &self.cfg;
        let w = ctx.weights;
        let n = batch.labels.len();
        let (h, enc) = self.encoder.forward(ps, batch)?;
        let true_buckets: Vec<usize> = batch.labels.iter().map(|&y| self.spec.assign(y)).collect();
        let mut bd = LossBreakdown::default();
        let mut out = LossForward {
            breakdown: bd,
            frozen: None,
            distill_stats: None,
            enc,
            base: None,
            heads: None,
            distill: None,
            residual: None,
            high: None,
            weights: w,
        };

        if let Some(base) = &self.baseline {
            let c = base.forward(ps, &h, None)?;
            let pred = c.output().data();
            let mut mse = 0.0;
            let grad = pred
                .iter()
                .zip(&batch.labels)
                .map(|(p, y)| {
                    mse += (p - y) * (p - y);
                    2.0 * (p - y) / n as f64
                })
                .collect();
            bd.baseline = mse / n as f64;
            out.base = Some((c, grad));
        }

        let mut captured = ctx.capture.then(|| Frozen {
            h_distill: h.clone(),
            p_align: None,
            buckets: None,
            high_rows: Vec::new(),
            h_high: None,
            e_high: None,
        });

        if let Some(heads) = &self.cascade {
            let drop = ctx.train.then_some(DropoutKey {
                seed: cfg.seed,
                step: ctx.step,
            });
            let (z, hc) = heads.forward(ps, &h, drop)?;
            let co = CascadeOutput::from_logits(z, cfg.cascade.threshold);
            let (lc, dz) = cascade_loss(&co.logits, &batch.labels, &self.spec, &cfg.cascade);
            bd.cascade = lc;
            bd.l2 = heads.l2_value(ps, &cfg.cascade.l2);

            if cfg.stages.distill {
                let (zd, hcd, fresh) = match frozen {
                    Some(fr) => {
                        let (zd, hcd) = heads.forward(ps, &fr.h_distill, drop)?;
                        (zd, hcd, true)
                    }
                    None => (co.logits.clone(), hc.clone(), false),
                };
                let (ld, dzd, stats) = distill_loss(&zd, &true_buckets, ctx.temperature, DISTILL_SMOOTHING)?;
                bd.distill = ld;
                out.distill_stats = Some(stats);
                out.distill = Some((hcd, dzd, fresh));
            }

            if let (Some(align), Some(res)) = (&self.alignment, &self.residual) {
                let p_align = frozen.and_then(|f| f.p_align.clone()).unwrap_or_else(|| co.marginals.clone());
                let buckets = frozen.and_then(|f| f.buckets.clone()).unwrap_or_else(|| co.predicted.clone());
                let (al, ac) = align.forward(ps, &h, &p_align, &buckets)?;
                let mode = if ctx.train { Mode::Train } else { Mode::Infer };
                let rc = res.forward(ps, &al, mode)?;
                let mut smooth_rng = stream(cfg.seed, &[tag::SMOOTHING, ctx.step]);
                let targets: Vec<f64> = batch
                    .labels
                    .iter()
                    .zip(&true_buckets)
                    .map(|(&y, &b)| {
                        let v = self.spec.normalize(y, b);
                        if ctx.train {
                            smooth_target(v, b, ctx.theta, &mut smooth_rng)
                        } else {
                            v
                        }
                    })
                    .collect();
                let (lr, dv) = residual_loss(rc.output().data(), &targets, cfg.alignment.value_weight_beta);
                bd.residual = lr;

                if let Some(high) = &self.high {
                    let top = self.top();
                    let rows: Vec<usize> = match frozen {
                        Some(f) => f.high_rows.clone(),
                        None => (0..n).filter(|&i| buckets[i] == top).collect(),
                    };
                    if !rows.is_empty() {
                        let h_high = frozen
                            .and_then(|f| f.h_high.clone())
                            .unwrap_or_else(|| h.select_rows(&rows));
                        let e_high = match frozen.and_then(|f| f.e_high.clone()) {
                            Some(e) => e,
                            None => align.embedding.lookup(ps, &vec![top; rows.len()])?,
                        };
                        let noise = ctx.train.then(|| {
                            let idx: Vec<usize> = rows.iter().map(|&r| batch.index[r]).collect();
                            augmentation_noise(cfg.seed, ctx.step, &idx, h.cols(), cfg.high_value.noise_std)
                        });
                        let hv = high.forward(ps, &h_high, &e_high, noise.as_ref())?;
                        let y_high: Vec<f64> = rows.iter().map(|&r| batch.labels[r]).collect();
                        let (lh, dvh, dph) =
                            high_value_loss(hv.v_hat.data(), hv.p_conf.data(), &y_high, &cfg.high_value);
                        bd.high_value = lh;
                        bd.n_high = rows.len();
                        if let Some(fr) = captured.as_mut() {
                            fr.h_high = Some(h_high);
                            fr.e_high = Some(e_high);
                        }
                        out.high = Some((hv, dvh, dph));
                    }
                    if let Some(fr) = captured.as_mut() {
                        fr.high_rows = rows;
                    }
                }
                if let Some(fr) = captured.as_mut() {
                    fr.p_align = Some(p_align);
                    fr.buckets = Some(buckets);
                }
                out.residual = Some((ac, rc, dv));
            }
            out.heads = Some((hc, dz));
        }

        let main = if self.cascade.is_some() {
            cfg.loss.alpha_cascade * bd.cascade
                + if cfg.stages.residual { cfg.loss.alpha_residual * bd.residual } else { 0.0 }
                + if cfg.stages.distill { cfg.loss.alpha_distill * bd.distill } else { 0.0 }
        } else {
            bd.baseline
        };
        let g = cfg.loss.gamma;
        bd.total = g * main + (1.0 - g) * bd.high_value;
        bd.objective = w.baseline * bd.baseline
            + w.cascade * bd.cascade
            + w.distill * bd.distill
            + w.residual * bd.residual
            + w.high_value * bd.high_value
            + w.l2 * bd.l2;
        for (name, v) in [
            ("baseline", bd.baseline),
            ("cascade", bd.cascade),
            ("distill", bd.distill),
            ("residual", bd.residual),
            ("high_value", bd.high_value),
            ("l2", bd.l2),
        ] {
            if !v.is_finite() {
                return Err(LtvError::non_finite(name, format!("loss term is {v} at step {}", ctx.step)));
            }
        }
        out.breakdown = bd;
        out.frozen = captured;
        Ok(out)
    }

    /// Accumulates gradients of the weighted objective into `ps`.
    pub fn backward(&self, ps: &mut ParamSet, fwd: &LossForward, batch: &Batch) {
        let w = fwd.weights;
        let h_dim = *self.cfg.encoder_hidden.last().expect("validated");
        let mut dh = Matrix::zeros(batch.labels.len(), h_dim);
        if let (Some(base), Some((c, g))) = (&self.baseline, &fwd.base) {
            if w.baseline != 0.0 {
                let dy = Matrix::column(&g.iter().map(|v| v * w.baseline).collect::<Vec<_>>());
                if let Some(d) = base.backward(ps, c, &dy, true) {
                    dh.add_assign(&d);
                }
            }
        }
        if let (Some(heads), Some((hc, dz))) = (&self.cascade, &fwd.heads) {
            if w.cascade != 0.0 {
                let mut d = dz.clone();
                d.scale(w.cascade);
                if let Some(dx) = heads.backward(ps, hc, &d, true) {
                    dh.add_assign(&dx);
                }
            }
            if let Some((hcd, dzd, _)) = &fwd.distill {
                if w.distill != 0.0 {
                    let mut d = dzd.clone();
                    d.scale(w.distill);
                    heads.backward(ps, hcd, &d, false);
                }
            }
            if w.l2 != 0.0 {
                heads.l2_backward(ps, &self.cfg.cascade.l2, w.l2);
            }
        }
        if let (Some(align), Some(res), Some((ac, rc, dv))) = (&self.alignment, &self.residual, &fwd.residual) {
            if w.residual != 0.0 {
                let dy = Matrix::column(&dv.iter().map(|v| v * w.residual).collect::<Vec<_>>());
                let dal = res.backward(ps, rc, &dy);
                dh.add_assign(&align.backward(ps, ac, &dal));
            }
        }
        if let (Some(high), Some((hv, dvh, dph))) = (&self.high, &fwd.high) {
            if w.high_value != 0.0 {
                let dv: Vec<f64> = dvh.iter().map(|v| v * w.high_value).collect();
                let dp: Vec<f64> = dph.iter().map(|v| v * w.high_value).collect();
                high.backward(ps, hv, &dv, &dp);
            }
        }
        self.encoder.backward(ps, &fwd.enc, batch, &dh);
    }

    /// Folds the batch statistics of a training forward into the running averages.
    pub fn update_running(&self, ps: &mut ParamSet, fwd: &LossForward) {
        if let (Some(res), Some((_, rc, _))) = (&self.residual, &fwd.residual) {
            res.update_running(ps, rc);
        }
    }

    /// Inference: no dropout, running batch-norm statistics, no noise.
    pub fn infer(&self, ps: &ParamSet, batch: &Batch) -> Result<Bundle> {
        let n = batch.labels.len().max(batch.index.len());
        let (h, _) = self.encoder.forward(ps, batch)?;
        let mut bundle = Bundle {
            h_shared: h,
            cascade: None,
            v_norm: None,
            v_high: vec![None; n],
            p_conf: vec![None; n],
            buckets: vec![0; n],
            v_final: vec![0.0; n],
            route: vec![Route::Direct; n],
        };
        let h = &bundle.h_shared;
        if let Some(base) = &self.baseline {
            let c = base.forward(ps, h, None)?;
            bundle.v_final = c.output().data().to_vec();
            bundle.buckets = bundle.v_final.iter().map(|&v| self.spec.assign(v)).collect();
            return Ok(bundle);
        }
        let heads = self.cascade.as_ref().expect("cascade present without baseline");
        let (z, _) = heads.forward(ps, h, None)?;
        let co = CascadeOutput::from_logits(z, self.cfg.cascade.threshold);
        bundle.buckets = co.predicted.clone();
        let top = self.top();
        if let (Some(align), Some(res)) = (&self.alignment, &self.residual) {
            let (al, _) = align.forward(ps, h, &co.marginals, &co.predicted)?;
            let rc = res.forward(ps, &al, Mode::Infer)?;
            bundle.v_norm = Some(rc.output().data().to_vec());
            if let Some(high) = &self.high {
                let rows: Vec<usize> = (0..n).filter(|&i| co.predicted[i] == top).collect();
                if !rows.is_empty() {
                    let e = align.embedding.lookup(ps, &vec![top; rows.len()])?;
                    let hv = high.forward(ps, &h.select_rows(&rows), &e, None)?;
                    for (j, &r) in rows.iter().enumerate() {
                        bundle.v_high[r] = Some(hv.v_hat.get(j, 0));
                        bundle.p_conf[r] = Some(hv.p_conf.get(j, 0));
                    }
                }
            }
        }
        for i in 0..n {
            let b = co.predicted[i];
            let (v, route) = if b == 0 {
                (0.0, Route::Zero)
            } else if let (true, Some(vh)) = (self.cfg.whale_head_override, bundle.v_high[i]) {
                (vh, Route::Whale)
            } else if let Some(vn) = &bundle.v_norm {
                (denormalize(vn[i], &self.spec, b), Route::Residual)
            } else {
                (self.spec.centers[b], Route::Center)
            };
            bundle.v_final[i] = v;
            bundle.route[i] = route;
        }
        bundle.cascade = Some(co);
        Ok(bundle)
    }
}
