use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Matrix, ParamId, ParamStore, ParameterTensor};
use crate::error::{Error, Result};
use crate::seed::{self, streams};

/// Model and optimization hyperparameters. Defaults are the published
/// settings; `d_g` is not published and defaults to half of `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// User/item embedding size.
    pub d: usize,
    /// Group embedding size, at most `d`.
    pub d_g: usize,
    /// Number of user groups and of item groups.
    pub k: usize,
    /// Weight of the group-learning and hierarchy terms.
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Sampled negatives per positive pair.
    pub neg_cf: usize,
    /// Sampled negative users (items) per batch for group reconstruction.
    pub p_group: usize,
    pub hidden_uv: Vec<usize>,
    pub hidden_ug: Vec<usize>,
    pub hidden_vg: Vec<usize>,
    /// Hidden sizes of the hierarchy networks, followed by a linear layer
    /// to `d_g`.
    pub hidden_hier: Vec<usize>,
    /// Half-width of the uniform embedding initializer.
    pub init_scale: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            d: 128,
            d_g: 64,
            k: 5,
            alpha: 0.01,
            lr: 1e-4,
            batch_size: 256,
            neg_cf: 5,
            p_group: 5,
            hidden_uv: vec![64, 16],
            hidden_ug: vec![64, 16],
            hidden_vg: vec![64, 16],
            hidden_hier: vec![64, 128],
            init_scale: 0.05,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("d_g", self.d_g),
            ("k", self.k),
            ("batch_size", self.batch_size),
            ("neg_cf", self.neg_cf),
            ("p_group", self.p_group),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_g > self.d {
            return Err(Error::Config(format!(
                "group dimension d_g = {} exceeds embedding dimension d = {}",
                self.d_g, self.d
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::Config("init_scale must be > 0".into()));
        }
        for (name, sizes) in [
            ("hidden_uv", &self.hidden_uv),
            ("hidden_ug", &self.hidden_ug),
            ("hidden_vg", &self.hidden_vg),
            ("hidden_hier", &self.hidden_hier),
        ] {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(Error::Config(format!("{name} must list positive layer sizes")));
            }
        }
        let (uv, ug, vg) = (
            self.hidden_uv.last(),
            self.hidden_ug.last(),
            self.hidden_vg.last(),
        );
        if uv != ug || uv != vg {
            // Fusion vectors are summed after three separate projections, so
            // this is not strictly required; keep the networks symmetric.
            return Err(Error::Config("interaction networks must share their output width".into()));
        }
        Ok(())
    }

    pub fn validate_for(&self, num_users: usize, num_items: usize) -> Result<()> {
        self.validate()?;
        if self.k >= num_users || self.k >= num_items {
            return Err(Error::Config(format!(
                "k = {} groups must be smaller than both {num_users} users and {num_items} items",
                self.k
            )));
        }
        Ok(())
    }
}

/// Which groups and bridges a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Both bridges and both group sides.
    #[serde(rename = "dbrec")]
    Full,
    /// User-item network only.
    #[serde(rename = "dbrec-o")]
    InteractionOnly,
    /// User groups only: user-group × item bridge plus user group learning
    /// and hierarchy.
    #[serde(rename = "dbrec-u")]
    UserGroups,
    /// Item groups only: user × item-group bridge plus item group learning
    /// and hierarchy.
    #[serde(rename = "dbrec-i")]
    ItemGroups,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::InteractionOnly,
        Variant::ItemGroups,
        Variant::UserGroups,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "dbrec",
            Variant::InteractionOnly => "dbrec-o",
            Variant::UserGroups => "dbrec-u",
            Variant::ItemGroups => "dbrec-i",
        }
    }

    pub fn mask(self) -> Mask {
        let (user, item) = match self {
            Variant::Full => (true, true),
            Variant::InteractionOnly => (false, false),
            Variant::UserGroups => (true, false),
            Variant::ItemGroups => (false, true),
        };
        Mask {
            user_group_bridge: user,
            item_group_bridge: item,
            user_hierarchy: user,
            item_hierarchy: item,
            user_recon: user,
            item_recon: item,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (dbrec, dbrec-o, dbrec-u, dbrec-i)")))
    }
}

/// Loss terms and bridging branches switched on for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    /// (user group × item) network, fed by user group labels.
    pub user_group_bridge: bool,
    /// (user × item group) network, fed by item group labels.
    pub item_group_bridge: bool,
    pub user_hierarchy: bool,
    pub item_hierarchy: bool,
    pub user_recon: bool,
    pub item_recon: bool,
}

impl Mask {
    pub fn needs_user_labels(&self) -> bool {
        self.user_group_bridge || self.user_hierarchy
    }

    pub fn needs_item_labels(&self) -> bool {
        self.item_group_bridge || self.item_hierarchy
    }

    pub fn any_auxiliary(&self) -> bool {
        self.user_hierarchy || self.item_hierarchy || self.user_recon || self.item_recon
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: ParamId,
    pub b: ParamId,
}

/// Stack of affine layers. Hidden layers use ReLU; the last layer is ReLU
/// too unless `linear_output` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub linear_output: bool,
}

impl Mlp {
    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.w, l.b])
    }
}

/// Parameters of one side (users or items) of group discovery and
/// hierarchy modeling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSide {
    /// `k × d_g` group embeddings.
    pub group_emb: ParamId,
    /// Per-entity offsets added before the hierarchy network.
    pub offset: ParamId,
    /// Activation transform, `d × k` weight and `k` bias.
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    /// Reconstruction decoder, `d_g × d` weight and `d` bias.
    pub recon_w: ParamId,
    pub recon_b: ParamId,
    /// Hierarchy network, `d → … → d_g`.
    pub hier: Mlp,
}

impl GroupSide {
    pub fn discovery_ids(&self) -> [ParamId; 4] {
        [self.proj_w, self.proj_b, self.recon_w, self.recon_b]
    }

    pub fn hierarchy_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        std::iter::once(self.offset).chain(self.hier.param_ids())
    }
}

/// Handles to every learnable tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub user_emb: ParamId,
    pub item_emb: ParamId,
    pub user: GroupSide,
    pub item: GroupSide,
    pub mlp_uv: Mlp,
    /// Input `[u; g_item; uᵀ M_u g_item]`.
    pub mlp_ug: Mlp,
    /// Input `[g_user; v; vᵀ M_v g_user]`.
    pub mlp_vg: Mlp,
    pub bilinear_u: ParamId,
    pub bilinear_v: ParamId,
    pub w_uv: ParamId,
    pub w_ug: ParamId,
    pub w_vg: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

impl ModelParams {
    pub fn side(&self, side: Side) -> &GroupSide {
        match side {
            Side::User => &self.user,
            Side::Item => &self.item,
        }
    }

    pub fn embedding(&self, side: Side) -> ParamId {
        match side {
            Side::User => self.user_emb,
            Side::Item => self.item_emb,
        }
    }

    /// Tensors of the user-item network, shared with the basic model.
    pub fn interaction_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.user_emb, self.item_emb];
        ids.extend(self.mlp_uv.param_ids());
        ids.push(self.w_uv);
        ids
    }

    /// Tensors that receive gradient under `mask`, in store order.
    pub fn trainable_ids(&self, mask: &Mask) -> Vec<ParamId> {
        let mut ids = self.interaction_ids();
        if mask.item_group_bridge {
            ids.extend(self.mlp_ug.param_ids());
            ids.extend([self.w_ug, self.bilinear_u, self.item.group_emb]);
        }
        if mask.user_group_bridge {
            ids.extend(self.mlp_vg.param_ids());
            ids.extend([self.w_vg, self.bilinear_v, self.user.group_emb]);
        }
        for (on_recon, on_hier, side) in [
            (mask.user_recon, mask.user_hierarchy, &self.user),
            (mask.item_recon, mask.item_hierarchy, &self.item),
        ] {
            if on_recon {
                ids.extend(side.discovery_ids());
                ids.push(side.group_emb);
            }
            if on_hier {
                ids.extend(side.hierarchy_ids());
                ids.push(side.group_emb);
            }
            if on_recon || on_hier {
                // β drives the hard labels; its transform trains through
                // reconstruction only, but is listed so masks stay simple.
                ids.extend([side.proj_w, side.proj_b]);
            }
        }
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: &str, rows: usize, cols: usize, half_width: f64) -> Result<ParamId> {
        let data = (0..rows * cols).map(|_| self.rng.gen_range(-half_width..half_width)).collect();
        self.store.add(ParameterTensor::new(name, &[rows, cols], Matrix::from_vec(rows, cols, data))?)
    }

    fn glorot(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(name, rows, cols, limit)
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let (r, c) = if shape.len() == 1 { (1, shape[0]) } else { (shape[0], shape[1]) };
        self.store.add(ParameterTensor::new(name, shape, Matrix::zeros(r, c))?)
    }

    fn mlp(&mut self, name: &str, input: usize, sizes: &[usize], linear_output: bool) -> Result<Mlp> {
        let mut layers = Vec::with_capacity(sizes.len());
        let mut fan_in = input;
        for (l, &out) in sizes.iter().enumerate() {
            let w = self.glorot(&format!("{name}.{l}.w"), fan_in, out)?;
            let b = self.zeros(&format!("{name}.{l}.b"), &[out])?;
            layers.push(Layer { w, b });
            fan_in = out;
        }
        Ok(Mlp { layers, linear_output })
    }

    fn side(&mut self, tag: &str, count: usize, hp: &HyperParams) -> Result<GroupSide> {
        let group_emb = self.uniform(&format!("{tag}_group_emb"), hp.k, hp.d_g, hp.init_scale)?;
        let offset = self.zeros(&format!("{tag}_offset"), &[count, hp.d])?;
        let proj_w = self.glorot(&format!("group_proj_{tag}.w"), hp.d, hp.k)?;
        let proj_b = self.zeros(&format!("group_proj_{tag}.b"), &[hp.k])?;
        let recon_w = self.glorot(&format!("recon_{tag}.w"), hp.d_g, hp.d)?;
        let recon_b = self.zeros(&format!("recon_{tag}.b"), &[hp.d])?;
        let mut sizes = hp.hidden_hier.clone();
        sizes.push(hp.d_g);
        let hier = self.mlp(&format!("mlp_hier_{}", &tag[..1]), hp.d, &sizes, true)?;
        Ok(GroupSide {
            group_emb,
            offset,
            proj_w,
            proj_b,
            recon_w,
            recon_b,
            hier,
        })
    }
}

/// Allocates every tensor with its seeded initial value.
///
/// Embeddings and group embeddings are uniform in `±init_scale`, weight
/// matrices use Glorot-uniform, biases, offsets and the two bridge output
/// weights start at zero.
pub fn init_params(
    hp: &HyperParams,
    num_users: usize,
    num_items: usize,
    seed: u64,
) -> Result<(ParamStore, ModelParams)> {
    hp.validate_for(num_users, num_items)?;
    let mut store = ParamStore::new();
    let mut init = Init {
        store: &mut store,
        rng: seed::stream(seed, &[streams::INIT]),
    };
    let user_emb = init.uniform("user_emb", num_users, hp.d, hp.init_scale)?;
    let item_emb = init.uniform("item_emb", num_items, hp.d, hp.init_scale)?;
    let user = init.side("user", num_users, hp)?;
    let item = init.side("item", num_items, hp)?;
    let mlp_uv = init.mlp("mlp_uv", 3 * hp.d, &hp.hidden_uv, false)?;
    let bridge_in = hp.d + hp.d_g + 1;
    let mlp_ug = init.mlp("mlp_ug", bridge_in, &hp.hidden_ug, false)?;
    let mlp_vg = init.mlp("mlp_vg", bridge_in, &hp.hidden_vg, false)?;
    let bilinear_u = init.glorot("bilinear_u", hp.d, hp.d_g)?;
    let bilinear_v = init.glorot("bilinear_v", hp.d, hp.d_g)?;
    let top = *hp.hidden_uv.last().expect("validated");
    let w_uv = init.glorot("w_uv", top, 1)?;
    // Bridge outputs start at zero, so a pretrained user-item network
    // keeps its predictions at the start of joint training.
    let w_ug = init.zeros("w_ug", &[top, 1])?;
    let w_vg = init.zeros("w_vg", &[top, 1])?;
    let params = ModelParams {
        user_emb,
        item_emb,
        user,
        item,
        mlp_uv,
        mlp_ug,
        mlp_vg,
        bilinear_u,
        bilinear_v,
        w_uv,
        w_ug,
        w_vg,
    };
    Ok((store, params))
}
