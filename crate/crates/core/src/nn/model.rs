//! Graph autoencoder with ensemble latent heads and an optional discriminator.

use std::rc::Rc;

use ndarray::{s, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{GraphBatch, Propagation};
use super::params::{Group, ParamId, ParamStore};
use super::tape::{block_membership, BlockGeometry, Mat, Tape, Var};
use super::{ConvKind, DiscriminatorKind, NnError, Result};
use crate::geometry::{CcmPoint, Ensemble, ProjectionRule};
use crate::graph::Graph;

/// Clamp applied to probabilities inside cross-entropy terms.
pub const PROB_EPS: f64 = 1e-7;
const BN_EPS: f64 = 1e-3;
const BN_MOMENTUM: f64 = 0.99;
const ENCODE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub conv_channels: Vec<usize>,
    pub pooling_channels: usize,
    pub head_hidden: usize,
    pub ensemble: Ensemble,
    pub conv_kind: ConvKind,
    pub l2_factor: f64,
    pub batch_norm: bool,
    pub dropout_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            conv_channels: vec![32, 64],
            pooling_channels: 128,
            head_hidden: 128,
            ensemble: Ensemble::standard(2),
            conv_kind: ConvKind::NodeOnly,
            l2_factor: 5e-4,
            batch_norm: false,
            dropout_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder_hidden: Vec<usize>,
    /// Hidden width of the ECC kernel-generating network (two layers).
    pub kernel_hidden: usize,
    pub discriminator_hidden: Vec<usize>,
    pub discriminator: DiscriminatorKind,
    pub sigma: f64,
    pub max_nodes: usize,
    pub node_features: usize,
    pub edge_features: usize,
    /// Projection of embeddings handed out by `encode_all`.
    #[serde(default)]
    pub projection: ProjectionRule,
}

impl ModelConfig {
    /// Defaults sized for graphs of up to `max_nodes` nodes with the given
    /// attribute widths.
    pub fn new(max_nodes: usize, node_features: usize, edge_features: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            decoder_hidden: vec![128, 256, 512],
            kernel_hidden: 128,
            discriminator_hidden: vec![128; 3],
            discriminator: DiscriminatorKind::Geometric,
            sigma: 5.0,
            max_nodes,
            node_features,
            edge_features,
            projection: ProjectionRule::Lift,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let bad = |msg: &str| Err(NnError::Config(msg.to_string()));
        if e.conv_channels.is_empty() || e.conv_channels.contains(&0) {
            return bad("conv_channels must be nonempty and positive");
        }
        if e.pooling_channels == 0 || e.head_hidden == 0 || self.kernel_hidden == 0 {
            return bad("layer widths must be positive");
        }
        if self.decoder_hidden.contains(&0) || self.discriminator_hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if !(0.0..1.0).contains(&e.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(e.l2_factor >= 0.0) {
            return bad("l2_factor must be nonnegative");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if self.max_nodes == 0 || self.node_features == 0 {
            return bad("max_nodes and node_features must be positive");
        }
        if e.conv_kind == ConvKind::EdgeConditioned && self.edge_features == 0 {
            return bad("edge-conditioned convolutions need edge attributes");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) enum ConvWeights {
    Gcn { w: ParamId },
    Ecc { kernel: [Dense; 3] },
}

#[derive(Debug, Clone)]
pub(crate) struct ConvLayer {
    pub weights: ConvWeights,
    pub bias: ParamId,
    pub norm: Option<Norm>,
    pub fin: usize,
    pub fout: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Index into the running-statistics table.
    pub stats: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub conv: Vec<ConvLayer>,
    pub gate: Dense,
    pub content: Dense,
    pub heads: Vec<(Dense, Dense)>,
    pub decoder: Vec<(Dense, Option<Norm>)>,
    pub out_a: Dense,
    pub out_x: Dense,
    pub out_e: Option<Dense>,
    pub disc: Vec<Dense>,
    pub disc_out: Dense,
}

/// Running mean and variance of a batch-normalised layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Latent code of one graph: the raw `c(d+1)` vector and its projection onto
/// every ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub raw: Vec<f64>,
    pub projected: Vec<CcmPoint>,
}

impl Embedding {
    /// Concatenated projected coordinates.
    pub fn projected_flat(&self) -> Vec<f64> {
        self.projected.iter().flat_map(|p| p.coords().iter().copied()).collect()
    }
}

/// Dense decoder output for the fixed maximum order.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub a: Array2<f64>,
    pub x: Array2<f64>,
    pub e: Array3<f64>,
}

/// Whether a forward pass trains (dropout, batch statistics) or evaluates.
pub(crate) enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

/// Tape handles produced by a forward pass through the autoencoder.
pub(crate) struct Forward {
    pub a: Var,
    pub x: Var,
    pub e: Option<Var>,
    /// Batch mean and variance of every normalised layer, in stats order.
    pub batch_stats: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub(crate) config: ModelConfig,
    pub(crate) store: ParamStore,
    pub(crate) layout: Layout,
    pub(crate) running: Vec<RunningStats>,
    pub(crate) seed: u64,
}

fn dense<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    group: Group,
    l2: bool,
    fin: usize,
    fout: usize,
    rng: &mut R,
) -> Dense {
    Dense {
        w: store.glorot(format!("{name}.w"), group, l2, fin, fout, rng),
        b: store.zeros(format!("{name}.b"), group, fout),
    }
}

fn norm(store: &mut ParamStore, running: &mut Vec<RunningStats>, name: &str, group: Group, width: usize) -> Norm {
    let gamma = store.add(format!("{name}.gamma"), group, false, Mat::ones((1, width)));
    let beta = store.zeros(format!("{name}.beta"), group, width);
    running.push(RunningStats {
        mean: vec![0.0; width],
        var: vec![1.0; width],
    });
    Norm {
        gamma,
        beta,
        stats: running.len() - 1,
    }
}

impl Autoencoder {
    /// Builds a model with Glorot-initialised weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let mut running = Vec::new();
        let enc = &config.encoder;
        let (g_enc, g_dec, g_dis) = (Group::Encoder, Group::Decoder, Group::Discriminator);

        let mut conv = Vec::new();
        let mut fin = config.node_features;
        for (l, &fout) in enc.conv_channels.iter().enumerate() {
            let name = format!("conv{l}");
            let weights = match enc.conv_kind {
                ConvKind::NodeOnly => ConvWeights::Gcn {
                    w: store.glorot(format!("{name}.w"), g_enc, true, fin, fout, &mut rng),
                },
                ConvKind::EdgeConditioned => {
                    let h = config.kernel_hidden;
                    let k0 = dense(
                        &mut store,
                        &format!("{name}.kernel0"),
                        g_enc,
                        true,
                        config.edge_features,
                        h,
                        &mut rng,
                    );
                    let k1 = dense(&mut store, &format!("{name}.kernel1"), g_enc, true, h, h, &mut rng);
                    let k2 = dense(
                        &mut store,
                        &format!("{name}.kernel2"),
                        g_enc,
                        true,
                        h,
                        fin * fout,
                        &mut rng,
                    );
                    ConvWeights::Ecc { kernel: [k0, k1, k2] }
                }
            };
            let bias = store.zeros(format!("{name}.b"), g_enc, fout);
            let norm = enc
                .batch_norm
                .then(|| norm(&mut store, &mut running, &format!("{name}.bn"), g_enc, fout));
            conv.push(ConvLayer {
                weights,
                bias,
                norm,
                fin,
                fout,
            });
            fin = fout;
        }
        let pool = enc.pooling_channels;
        let gate = dense(&mut store, "pool.gate", g_enc, false, fin, pool, &mut rng);
        let content = dense(&mut store, "pool.content", g_enc, false, fin, pool, &mut rng);

        let block = enc.ensemble.block_dim();
        let mut heads = Vec::new();
        for (m, member) in enc.ensemble.members().iter().enumerate() {
            let hidden = dense(
                &mut store,
                &format!("head{m}.hidden"),
                g_enc,
                false,
                pool,
                enc.head_hidden,
                &mut rng,
            );
            let out = dense(
                &mut store,
                &format!("head{m}.out"),
                g_enc,
                false,
                enc.head_hidden,
                block,
                &mut rng,
            );
            // Start the raw codes at the manifold origin.
            let origin = member.origin();
            store
                .get_mut(out.b)
                .row_mut(0)
                .assign(&ndarray::ArrayView1::from(origin.coords()));
            heads.push((hidden, out));
        }

        let latent = enc.ensemble.latent_dim();
        let mut decoder = Vec::new();
        let mut width = latent;
        for (l, &h) in config.decoder_hidden.iter().enumerate() {
            let d = dense(&mut store, &format!("dec{l}"), g_dec, false, width, h, &mut rng);
            let n = enc
                .batch_norm
                .then(|| norm(&mut store, &mut running, &format!("dec{l}.bn"), g_dec, h));
            decoder.push((d, n));
            width = h;
        }
        let m = config.max_nodes;
        let out_a = dense(&mut store, "out.a", g_dec, false, width, m * m, &mut rng);
        let out_x = dense(
            &mut store,
            "out.x",
            g_dec,
            false,
            width,
            m * config.node_features,
            &mut rng,
        );
        let out_e = (config.edge_features > 0).then(|| {
            dense(
                &mut store,
                "out.e",
                g_dec,
                false,
                width,
                m * m * config.edge_features,
                &mut rng,
            )
        });

        let mut disc = Vec::new();
        let mut width = latent;
        for (l, &h) in config.discriminator_hidden.iter().enumerate() {
            disc.push(dense(&mut store, &format!("disc{l}"), g_dis, false, width, h, &mut rng));
            width = h;
        }
        let disc_out = dense(&mut store, "disc.out", g_dis, false, width, 1, &mut rng);

        let layout = Layout {
            conv,
            gate,
            content,
            heads,
            decoder,
            out_a,
            out_x,
            out_e,
            disc,
            disc_out,
        };
        Ok(Autoencoder {
            config,
            store,
            layout,
            running,
            seed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Selects how `encode_all` projects codes onto hyperbolic members.
    pub fn set_projection(&mut self, rule: ProjectionRule) {
        self.config.projection = rule;
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.config.encoder.ensemble
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub(crate) fn block_geometry(&self) -> Rc<BlockGeometry> {
        let ens = self.ensemble();
        Rc::new(BlockGeometry {
            block: ens.block_dim(),
            kappas: ens.members().iter().map(|m| m.kappa.value()).collect(),
        })
    }

    /// Checks that every graph fits the model's fixed shapes.
    pub fn check_graph(&self, g: &Graph) -> Result<()> {
        let c = &self.config;
        if g.order() == 0 || g.order() > c.max_nodes {
            return Err(NnError::Shape(format!(
                "graph has {} nodes; the model accepts 1..={}",
                g.order(),
                c.max_nodes
            )));
        }
        if g.node_features() != c.node_features || g.edge_features() != c.edge_features {
            return Err(NnError::Shape(format!(
                "graph has F={}, S={}; the model expects F={}, S={}",
                g.node_features(),
                g.edge_features(),
                c.node_features,
                c.edge_features
            )));
        }
        Ok(())
    }

    pub(crate) fn batch(&self, graphs: &[&Graph]) -> Result<GraphBatch> {
        for g in graphs {
            self.check_graph(g)?;
        }
        Ok(GraphBatch::new(
            graphs,
            self.config.encoder.conv_kind,
            self.config.max_nodes,
        ))
    }

    fn linear(tape: &mut Tape, p: &[Var], d: Dense, x: Var) -> Var {
        let h = tape.matmul(x, p[d.w]);
        tape.add_bias(h, p[d.b])
    }

    fn normalise(
        &self,
        tape: &mut Tape,
        p: &[Var],
        n: Norm,
        x: Var,
        train: bool,
        stats: &mut Vec<(Vec<f64>, Vec<f64>)>,
    ) -> Var {
        if train {
            let (out, mean, var) = tape.batch_norm(x, p[n.gamma], p[n.beta], BN_EPS);
            stats.push((mean, var));
            out
        } else {
            // Evaluation uses frozen statistics, so the layer is an affine map.
            let rs = &self.running[n.stats];
            let gamma = tape.value(p[n.gamma]);
            let beta = tape.value(p[n.beta]);
            let cols = rs.mean.len();
            let scale = Mat::from_shape_fn((1, cols), |(_, c)| gamma[[0, c]] / (rs.var[c] + BN_EPS).sqrt());
            let shift = Mat::from_shape_fn((1, cols), |(_, c)| beta[[0, c]] - rs.mean[c] * scale[[0, c]]);
            let rows = tape.value(x).nrows();
            let scale_rows = scale.broadcast((rows, cols)).expect("row vector").to_owned();
            let scaled = tape.mul_const(x, Rc::new(scale_rows));
            let shift = tape.leaf(shift);
            tape.add_bias(scaled, shift)
        }
    }

    /// Encoder forward pass up to the raw latent matrix `B × c(d+1)`.
    pub(crate) fn encoder_forward(
        &self,
        tape: &mut Tape,
        p: &[Var],
        batch: &GraphBatch,
        mode: &mut Mode<'_>,
        stats: &mut Vec<(Vec<f64>, Vec<f64>)>,
    ) -> Var {
        let train = matches!(mode, Mode::Train(_));
        let mut h = tape.leaf(batch.x.clone());
        let attrs = match &batch.propagation {
            Propagation::Edges { attributes, .. } => Some(tape.leaf(attributes.clone())),
            Propagation::Normalized(_) => None,
        };
        let layers = self.layout.conv.len();
        for (l, layer) in self.layout.conv.iter().enumerate() {
            let conv = match (&layer.weights, &batch.propagation) {
                (ConvWeights::Gcn { w }, Propagation::Normalized(agg)) => {
                    let xw = tape.matmul(h, p[*w]);
                    tape.aggregate(xw, agg.clone())
                }
                (ConvWeights::Ecc { kernel }, Propagation::Edges { plan, .. }) => {
                    let e = attrs.expect("edge attributes bound");
                    let k0 = Self::linear(tape, p, kernel[0], e);
                    let k0 = tape.relu(k0);
                    let k1 = Self::linear(tape, p, kernel[1], k0);
                    let k1 = tape.relu(k1);
                    let k = Self::linear(tape, p, kernel[2], k1);
                    tape.edge_conv(h, k, plan.clone(), layer.fin, layer.fout)
                }
                _ => unreachable!("batch propagation matches the convolution kind"),
            };
            let mut out = tape.add_bias(conv, p[layer.bias]);
            if let Some(n) = layer.norm {
                out = self.normalise(tape, p, n, out, train, stats);
            }
            out = tape.relu(out);
            if l + 1 < layers {
                if let Mode::Train(rng) = mode {
                    let rate = self.config.encoder.dropout_rate;
                    if rate > 0.0 {
                        let keep = 1.0 / (1.0 - rate);
                        let dim = tape.value(out).dim();
                        let mask =
                            Mat::from_shape_simple_fn(dim, || if rng.random::<f64>() < rate { 0.0 } else { keep });
                        out = tape.mul_const(out, Rc::new(mask));
                    }
                }
            }
            h = out;
        }
        let gate = Self::linear(tape, p, self.layout.gate, h);
        let gate = tape.sigmoid(gate);
        let content = Self::linear(tape, p, self.layout.content, h);
        let content = tape.tanh(content);
        let gated = tape.mul(gate, content);
        let pooled = tape.segment_sum(gated, batch.segments.clone());

        let blocks: Vec<Var> = self
            .layout
            .heads
            .iter()
            .map(|&(hidden, out)| {
                let z = Self::linear(tape, p, hidden, pooled);
                let z = tape.relu(z);
                Self::linear(tape, p, out, z)
            })
            .collect();
        tape.concat_cols(&blocks)
    }

    /// Decoder forward pass from the projected latent matrix.
    pub(crate) fn decoder_forward(
        &self,
        tape: &mut Tape,
        p: &[Var],
        z: Var,
        train: bool,
        stats: &mut Vec<(Vec<f64>, Vec<f64>)>,
    ) -> (Var, Var, Option<Var>) {
        let mut h = z;
        for &(d, n) in &self.layout.decoder {
            h = Self::linear(tape, p, d, h);
            if let Some(n) = n {
                h = self.normalise(tape, p, n, h, train, stats);
            }
            h = tape.relu(h);
        }
        let a = Self::linear(tape, p, self.layout.out_a, h);
        let a = tape.sigmoid(a);
        let x = Self::linear(tape, p, self.layout.out_x, h);
        let e = self.layout.out_e.map(|d| Self::linear(tape, p, d, h));
        (a, x, e)
    }

    /// Discriminator probability that each latent row came from the prior.
    pub(crate) fn discriminator_forward(&self, tape: &mut Tape, p: &[Var], z: Var) -> Var {
        let mut h = z;
        for &d in &self.layout.disc {
            h = Self::linear(tape, p, d, h);
            h = tape.relu(h);
        }
        let out = Self::linear(tape, p, self.layout.disc_out, h);
        tape.sigmoid(out)
    }

    /// Full autoencoder pass: encoder, training-time projection, decoder.
    pub(crate) fn forward(&self, tape: &mut Tape, p: &[Var], batch: &GraphBatch, mut mode: Mode<'_>) -> Forward {
        let train = matches!(mode, Mode::Train(_));
        let mut batch_stats = Vec::new();
        let raw = self.encoder_forward(tape, p, batch, &mut mode, &mut batch_stats);
        let projected = tape.project_blocks(raw, self.block_geometry());
        let (a, x, e) = self.decoder_forward(tape, p, projected, train, &mut batch_stats);
        Forward { a, x, e, batch_stats }
    }

    /// Batch reconstruction loss on the tape (mean over graphs).
    pub(crate) fn reconstruction_on_tape(&self, tape: &mut Tape, f: &Forward, batch: &GraphBatch) -> Var {
        let t = &batch.targets;
        let mut loss = tape.bce(f.a, t.a.clone(), t.a_weight.clone(), PROB_EPS);
        let lx = tape.squared_error(f.x, t.x.clone(), t.x_weight.clone());
        loss = tape.add(loss, lx);
        if let (Some(e), Some((et, ew))) = (f.e, &t.e) {
            let le = tape.squared_error(e, et.clone(), ew.clone());
            loss = tape.add(loss, le);
        }
        loss
    }

    /// `l2_factor · Σ‖W‖²` over the weight matrices of the encoder convolutions.
    pub(crate) fn l2_on_tape(&self, tape: &mut Tape, p: &[Var]) -> Option<Var> {
        let factor = self.config.encoder.l2_factor;
        if factor == 0.0 {
            return None;
        }
        let mut total: Option<Var> = None;
        for (id, param) in self.store.params.iter().enumerate() {
            if !param.l2 {
                continue;
            }
            let sq = tape.sum_squares(p[id]);
            total = Some(match total {
                Some(t) => tape.add(t, sq),
                None => sq,
            });
        }
        total.map(|t| tape.scale(t, factor))
    }

    pub(crate) fn update_running_stats(&mut self, batch_stats: &[(Vec<f64>, Vec<f64>)]) {
        for (rs, (mean, var)) in self.running.iter_mut().zip(batch_stats) {
            for c in 0..rs.mean.len() {
                rs.mean[c] = BN_MOMENTUM * rs.mean[c] + (1.0 - BN_MOMENTUM) * mean[c];
                rs.var[c] = BN_MOMENTUM * rs.var[c] + (1.0 - BN_MOMENTUM) * var[c];
            }
        }
    }

    /// Raw latent codes of `graphs`, one row per graph.
    pub fn encode_raw(&self, graphs: &[&Graph]) -> Result<Array2<f64>> {
        let mut rows = Vec::with_capacity(graphs.len());
        for chunk in graphs.chunks(ENCODE_CHUNK) {
            let batch = self.batch(chunk)?;
            let mut tape = Tape::new();
            let p = self.store.bind(&mut tape);
            let raw = self.encoder_forward(&mut tape, &p, &batch, &mut Mode::Eval, &mut Vec::new());
            rows.push(tape.value(raw).clone());
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
    }

    /// Embeds one graph; projection errors are reported with index 0.
    pub fn encode(&self, graph: &Graph) -> Result<Embedding> {
        Ok(self.encode_all(&[graph])?.remove(0))
    }

    /// Embeds a sequence of graphs. Projection failures carry the graph index.
    pub fn encode_all(&self, graphs: &[&Graph]) -> Result<Vec<Embedding>> {
        let raw = self.encode_raw(graphs)?;
        raw.rows()
            .into_iter()
            .enumerate()
            .map(|(index, row)| {
                let raw = row.to_vec();
                let projected = self
                    .ensemble()
                    .project_with(&raw, self.config.projection)
                    .map_err(|source| NnError::Projection { index, source })?;
                Ok(Embedding { raw, projected })
            })
            .collect()
    }

    /// Decodes a concatenated projected latent vector into dense matrices of
    /// the model's maximum order.
    pub fn decode(&self, z_projected: &[f64]) -> Result<Reconstruction> {
        let latent = self.ensemble().latent_dim();
        if z_projected.len() != latent {
            return Err(NnError::Shape(format!(
                "latent vector has length {}, expected {latent}",
                z_projected.len()
            )));
        }
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let z = tape.leaf(Mat::from_shape_vec((1, latent), z_projected.to_vec()).expect("row"));
        let (a, x, e) = self.decoder_forward(&mut tape, &p, z, false, &mut Vec::new());
        Ok(self.unflatten(
            tape.value(a).row(0).to_vec(),
            tape.value(x).row(0).to_vec(),
            e.map(|e| tape.value(e).row(0).to_vec()),
        ))
    }

    fn unflatten(&self, a: Vec<f64>, x: Vec<f64>, e: Option<Vec<f64>>) -> Reconstruction {
        let c = &self.config;
        let m = c.max_nodes;
        Reconstruction {
            a: Array2::from_shape_vec((m, m), a).expect("square"),
            x: Array2::from_shape_vec((m, c.node_features), x).expect("rows"),
            e: match e {
                Some(e) => Array3::from_shape_vec((m, m, c.edge_features), e).expect("cube"),
                None => Array3::zeros((m, m, 0)),
            },
        }
    }

    /// Mean reconstruction loss over `graphs` in evaluation mode.
    pub fn evaluate_loss(&self, graphs: &[&Graph]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in graphs.chunks(ENCODE_CHUNK) {
            let batch = self.batch(chunk)?;
            let mut tape = Tape::new();
            let p = self.store.bind(&mut tape);
            let f = self.forward(&mut tape, &p, &batch, Mode::Eval);
            let loss = self.reconstruction_on_tape(&mut tape, &f, &batch);
            total += tape.scalar(loss) * chunk.len() as f64;
        }
        Ok(total / graphs.len() as f64)
    }

    /// Discriminator probabilities for raw latent rows.
    pub fn discriminate(&self, z_raw: &Array2<f64>) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let z = tape.leaf(z_raw.clone());
        let d = self.discriminator_forward(&mut tape, &p, z);
        tape.value(d).column(0).to_vec()
    }
}

/// Reconstruction loss of a single graph against decoder output of any order
/// `≥ N`; only the leading `N × N` block is compared.
pub fn reconstruction_loss(graph: &Graph, a_hat: &Array2<f64>, x_hat: &Array2<f64>, e_hat: &Array3<f64>) -> f64 {
    let n = graph.order();
    let nn = (n * n) as f64;
    let a = graph.adjacency();
    let mut adj = 0.0;
    for ((i, j), &t) in a.indexed_iter() {
        let p = a_hat[[i, j]].clamp(PROB_EPS, 1.0 - PROB_EPS);
        adj -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    let x = graph.node_attributes();
    let xs = &x_hat.slice(s![..n, ..x.ncols()]) - x;
    let mut loss = adj / nn + xs.mapv(|v| v * v).sum() / n as f64;
    if graph.edge_features() > 0 {
        let es = &e_hat.slice(s![..n, ..n, ..]) - graph.edge_attributes();
        loss += es.mapv(|v| v * v).sum() / nn;
    }
    loss
}

/// Mean over ensemble members of the per-member membership degree of a raw
/// latent vector; flat members contribute 1.
pub fn geometric_membership(ensemble: &Ensemble, z_raw: &[f64], sigma: f64) -> Result<f64> {
    if z_raw.len() != ensemble.latent_dim() {
        return Err(NnError::Shape(format!(
            "latent vector has length {}, expected {}",
            z_raw.len(),
            ensemble.latent_dim()
        )));
    }
    let total: f64 = ensemble
        .members()
        .iter()
        .zip(z_raw.chunks(ensemble.block_dim()))
        .map(|(m, z)| block_membership(z, m.kappa.value(), sigma).0)
        .sum();
    Ok(total / ensemble.len() as f64)
}
