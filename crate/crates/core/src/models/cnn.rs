use crate::diffcore::{Dense, DiffError, Graph, ParamId, ParamSet, Tensor, Var};
use crate::embed::PAD;
use crate::scalar::Scalar;

/// Convolution filters of one width: one `E × maps` matrix per offset.
#[derive(Clone, Debug)]
struct ConvBank {
    width: usize,
    taps: Vec<ParamId>,
    bias: ParamId,
}

/// Utterance encoder: 1-D convolutions over token windows, max-over-time
/// pooling, concatenation and a ReLU dense layer.
#[derive(Clone, Debug)]
pub struct CnnExtractor {
    pub embed: ParamId,
    pub embed_dim: usize,
    banks: Vec<ConvBank>,
    dense: Dense,
}

impl CnnExtractor {
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        table: Tensor<T>,
        trainable_embeddings: bool,
        filter_sizes: &[usize],
        maps: usize,
        out: usize,
    ) -> Result<Self, DiffError> {
        let embed_dim = table.cols();
        let embed = params.add_tensor("embed.table", table, trainable_embeddings)?;
        let mut banks = Vec::with_capacity(filter_sizes.len());
        for &width in filter_sizes {
            // Glorot bounds use the full receptive field as fan-in.
            let bound = (6.0 / ((width * embed_dim + maps) as f64)).sqrt();
            let taps = (0..width)
                .map(|o| {
                    params.add_uniform(format!("cnn.conv{width}.w{o}"), embed_dim, maps, bound)
                })
                .collect::<Result<_, _>>()?;
            let bias = params.add_zeros(format!("cnn.conv{width}.b"), 1, maps)?;
            banks.push(ConvBank { width, taps, bias });
        }
        let dense = Dense::register(params, "cnn.dense", maps * filter_sizes.len(), out)?;
        Ok(Self {
            embed,
            embed_dim,
            banks,
            dense,
        })
    }

    pub fn max_width(&self) -> usize {
        self.banks.iter().map(|b| b.width).max().unwrap_or(1)
    }

    /// Encodes one utterance given its token ids (at least `length` of them).
    ///
    /// Positions past `length` are treated as PAD, and every filter width sees
    /// at least one window, so `length == 0` reduces to the bias pathway.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ids: &[usize],
        length: usize,
    ) -> Result<Var, DiffError> {
        let rows = length.max(self.max_width());
        let mut padded: Vec<usize> = ids[..length].to_vec();
        padded.resize(rows, PAD);
        let table = g.param(self.embed);
        let x = g.gather_rows(table, &padded)?;

        let mut pooled = Vec::with_capacity(self.banks.len());
        for bank in &self.banks {
            let windows = length.max(bank.width) - bank.width + 1;
            let mut acc: Option<Var> = None;
            for (o, &tap) in bank.taps.iter().enumerate() {
                let xs = g.slice_rows(x, o, windows)?;
                let w = g.param(tap);
                let term = g.matmul(xs, w)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, term)?,
                    None => term,
                });
            }
            let b = g.param(bank.bias);
            let conv = g.add(acc.expect("filter width >= 1"), b)?;
            pooled.push(g.max_over_rows(conv)?);
        }
        let cat = g.concat_cols(&pooled)?;
        let h = self.dense.forward(g, cat)?;
        Ok(g.relu(h))
    }
}
