#pragma once

#include "uret/backbone.hpp"
#include "uret/config.hpp"
#include "uret/head.hpp"
#include "uret/uncertainty.hpp"

namespace uret {

struct ModelConfig {
  BackboneConfig backbone;
  int uncert_heads = 3;
  double logvar_clamp = 10.0;
  bool sample_at_eval = false;
  LossWeights loss;
  int head_channels = 32;
  bool window_penalty = true;
  double template_factor = 2.0;
  double search_factor = 4.0;
  std::string variant = "full";  // "full" or "baseline"

  static ModelConfig from(const RunConfig& rc) {
    ModelConfig c;
    c.backbone.dim = static_cast<int>(rc.get_int("backbone.dim"));
    c.backbone.depth = static_cast<int>(rc.get_int("backbone.depth"));
    c.backbone.heads = static_cast<int>(rc.get_int("backbone.heads"));
    c.backbone.patch_size = static_cast<int>(rc.get_int("backbone.patch_size"));
    c.backbone.mlp_ratio = rc.get_real("backbone.mlp_ratio");
    c.backbone.elim_blocks = rc.get_int_list("backbone.elim_blocks");
    c.backbone.keep_ratio = rc.get_real("backbone.keep_ratio");
    c.backbone.template_side = static_cast<int>(rc.get_int("data.template_side"));
    c.backbone.search_side = static_cast<int>(rc.get_int("data.search_side"));
    c.uncert_heads = static_cast<int>(rc.get_int("uncert.heads"));
    c.logvar_clamp = rc.get_real("uncert.logvar_clamp");
    c.sample_at_eval = rc.get_bool("uncert.sample_at_eval");
    c.loss.lambda_iou = rc.get_real("loss.lambda_iou");
    c.loss.lambda_l1 = rc.get_real("loss.lambda_l1");
    c.loss.alpha_kl = rc.get_real("loss.alpha_kl");
    c.head_channels = static_cast<int>(rc.get_int("head.channels"));
    c.window_penalty = rc.get_bool("head.window_penalty");
    c.template_factor = rc.get_real("data.template_factor");
    c.search_factor = rc.get_real("data.search_factor");
    c.variant = rc.get_string("model.variant");
    c.validate();
    return c;
  }

  void validate() const {
    if (variant != "full" && variant != "baseline")
      throw ConfigError("model.variant must be 'full' or 'baseline', got '" + variant + "'");
    if (backbone.template_side % backbone.patch_size != 0 ||
        backbone.search_side % backbone.patch_size != 0)
      throw ConfigError("crop sides must be divisible by backbone.patch_size");
    if (backbone.dim % backbone.heads != 0)
      throw ConfigError("backbone.dim must be divisible by backbone.heads");
    if (backbone.dim % uncert_heads != 0)
      throw ConfigError("backbone.dim must be divisible by uncert.heads");
    if (!(backbone.keep_ratio > 0.0) || backbone.keep_ratio > 1.0)
      throw ConfigError("backbone.keep_ratio must be in (0, 1]");
    for (int b : backbone.elim_blocks)
      if (b < 0 || b >= backbone.depth) throw ConfigError("backbone.elim_blocks out of range");
  }

  int grid_side() const { return backbone.search_side / backbone.patch_size; }

  // Architecture fingerprint stored in checkpoints; loading a checkpoint
  // into a differently-shaped model is rejected by name/shape audit too.
  std::string summary() const {
    std::string s = "variant=" + variant;
    s += ";dim=" + std::to_string(backbone.dim);
    s += ";depth=" + std::to_string(backbone.depth);
    s += ";heads=" + std::to_string(backbone.heads);
    s += ";patch=" + std::to_string(backbone.patch_size);
    s += ";mlp_ratio=" + std::to_string(backbone.mlp_ratio);
    s += ";tmpl=" + std::to_string(backbone.template_side);
    s += ";search=" + std::to_string(backbone.search_side);
    s += ";uncert_heads=" + std::to_string(uncert_heads);
    s += ";head_channels=" + std::to_string(head_channels);
    return s;
  }
};

// Pixel matrices for one sample: (side*side rows x 3 cols), values in [0,1].
template <typename T>
struct ModelInputs {
  Mat<T> rgb_template;
  Mat<T> ev_template;
  Mat<T> rgb_search;
  Mat<T> ev_search;
};

template <typename T>
struct TrainTarget {
  Mat<T> response_map;  // (grid*grid x 1), CornerNet Gaussian
  int gt_cell = 0;
  Mat<T> gt_box;        // 1x4 (x, y, w, h) in search-patch pixels
};

template <typename T>
struct BranchGraph {
  MapsOut<T> maps;
  Val<T> pred_box;
  Val<T> cls_loss, iou_loss, l1_loss, total;
};

template <typename T>
struct TrainGraph {
  BranchGraph<T> fusion, cross_modal, rgb;  // cross_modal/rgb only for "full"
  Val<T> kl_v, kl_cm;
  Val<T> total;
  EncodeTrace<T> trace;
  std::vector<Val<T>> uncert_attn;  // attention rows from the uncertainty stage
};

struct InferenceOut {
  ScoreMaps maps;
  double confidence = 0;
};

template <typename T>
class TrackModel {
 public:
  ModelConfig cfg;
  ParamStore<T> store;

  static TrackModel build(const ModelConfig& cfg, uint64_t seed) {
    TrackModel m;
    m.cfg = cfg;
    Rng rng(seed);
    const BackboneConfig& bc = cfg.backbone;
    if (cfg.variant == "full") {
      m.embed_rgb_ = make_patch_embed(m.store, "backbone.embed_rgb", bc, rng);
      m.embed_ev_ = make_patch_embed(m.store, "backbone.embed_ev", bc, rng);
    } else {
      m.input_fuse_ = make_linear(m.store, "input_fuse.conv1x1", 6, 3, rng, T(0.3));
      m.embed_base_ = make_patch_embed(m.store, "backbone.embed_fused", bc, rng);
    }
    m.vit_ = make_vit(m.store, "backbone", bc, rng);
    if (cfg.variant == "full") {
      const int n_v = bc.search_tokens() + bc.template_tokens();
      m.modal_unc_ = make_uncertainty(m.store, "uncert.modal", bc.dim, cfg.uncert_heads, n_v, n_v, rng);
      m.cross_unc_ = make_uncertainty(m.store, "uncert.cross", bc.dim, cfg.uncert_heads, n_v, n_v, rng);
      m.fusion_ = make_fusion(m.store, "fusion", bc.dim, cfg.uncert_heads, rng);
    }
    m.head_ = make_head(m.store, "head", bc.dim, cfg.head_channels, rng);
    return m;
  }

  // Shared encoder: embeds both modality crops, runs the joint backbone, and
  // returns per-branch token sequences ordered [search-live, template].
  struct CoreOut {
    Val<T> fused, cross_sample, rgb_sample;   // full variant
    Val<T> single;                            // baseline variant
    GaussianTokens<T> modal_g, cross_g;       // full variant
    std::vector<int> search_live;             // surviving search token positions
    EncodeTrace<T> trace;
    std::vector<Val<T>> uncert_attn;
  };

  CoreOut forward_core(Ctx<T>& ctx, const ModelInputs<T>& in, bool training, Rng* noise) const {
    const BackboneConfig& bc = cfg.backbone;
    CoreOut out;
    TokenLayout layout;
    Val<T> tokens{nullptr, -1};
    const int gt = bc.template_side / bc.patch_size;
    const int gs = bc.search_side / bc.patch_size;

    if (cfg.variant == "full") {
      Val<T> tv = patch_embed(ctx, ctx.c(in.rgb_template), bc.template_side, embed_rgb_, bc, true);
      Val<T> sv = patch_embed(ctx, ctx.c(in.rgb_search), bc.search_side, embed_rgb_, bc, false);
      Val<T> te = patch_embed(ctx, ctx.c(in.ev_template), bc.template_side, embed_ev_, bc, true);
      Val<T> se = patch_embed(ctx, ctx.c(in.ev_search), bc.search_side, embed_ev_, bc, false);
      tokens = concat_rows(std::vector<Val<T>>{tv, sv, te, se});
      layout.regions = {make_region(Region::kRgbTemplate, gt), make_region(Region::kRgbSearch, gs),
                        make_region(Region::kEvTemplate, gt), make_region(Region::kEvSearch, gs)};
    } else {
      Val<T> tmpl_fused = fuse_input_pixels(ctx, in.rgb_template, in.ev_template);
      Val<T> search_fused = fuse_input_pixels(ctx, in.rgb_search, in.ev_search);
      Val<T> tb = patch_embed(ctx, tmpl_fused, bc.template_side, embed_base_, bc, true);
      Val<T> sb = patch_embed(ctx, search_fused, bc.search_side, embed_base_, bc, false);
      tokens = concat_rows(std::vector<Val<T>>{tb, sb});
      layout.regions = {make_region(Region::kRgbTemplate, gt), make_region(Region::kRgbSearch, gs)};
    }

    Val<T> encoded = joint_encode(ctx, tokens, layout, vit_, bc, &out.trace);

    const int tmpl_idx = layout.region_index(Region::kRgbTemplate);
    const int search_idx = layout.region_index(Region::kRgbSearch);
    const auto& search_region = layout.regions[static_cast<size_t>(search_idx)];
    out.search_live = search_region.live;

    if (cfg.variant == "baseline") {
      std::vector<Val<T>> parts{
          rows(encoded, layout.offset_of(static_cast<size_t>(search_idx)),
               static_cast<int>(search_region.live.size())),
          rows(encoded, layout.offset_of(static_cast<size_t>(tmpl_idx)),
               static_cast<int>(layout.regions[static_cast<size_t>(tmpl_idx)].live.size()))};
      out.single = concat_rows(parts);
      return out;
    }

    // branch features ordered [search', template'] per modality
    auto region_slice = [&](Region tag) {
      const int ri = layout.region_index(tag);
      const auto& info = layout.regions[static_cast<size_t>(ri)];
      return rows(encoded, layout.offset_of(static_cast<size_t>(ri)),
                  static_cast<int>(info.live.size()));
    };
    Val<T> f_v = concat_rows(std::vector<Val<T>>{region_slice(Region::kRgbSearch),
                                                 region_slice(Region::kRgbTemplate)});
    Val<T> f_e = concat_rows(std::vector<Val<T>>{region_slice(Region::kEvSearch),
                                                 region_slice(Region::kEvTemplate)});

    // positional-table rows: search positions first, then template offset by
    // the full search count
    auto pos_of = [&](Region search_tag, Region tmpl_tag) {
      std::vector<int> pos;
      const auto* s = layout.find(search_tag);
      const auto* t = layout.find(tmpl_tag);
      for (int i : s->live) pos.push_back(i);
      for (int i : t->live) pos.push_back(bc.search_tokens() + i);
      return pos;
    };
    const std::vector<int> pos_v = pos_of(Region::kRgbSearch, Region::kRgbTemplate);
    const std::vector<int> pos_e = pos_of(Region::kEvSearch, Region::kEvTemplate);

    std::vector<Val<T>> attn_modal, attn_cross, attn_fuse;
    out.modal_g = perceive_uncertainty(ctx, f_v, f_v, pos_v, pos_v, modal_unc_, cfg.logvar_clamp,
                                       &attn_modal);
    out.cross_g = perceive_uncertainty(ctx, f_v, f_e, pos_v, pos_e, cross_unc_, cfg.logvar_clamp,
                                       &attn_cross);

    const bool sample = training || cfg.sample_at_eval;
    out.rgb_sample = reparameterize(ctx, out.modal_g, noise, sample);
    out.cross_sample = reparameterize(ctx, out.cross_g, noise, sample);
    out.fused = fuse_modalities(ctx, out.rgb_sample, out.cross_sample, fusion_, &attn_fuse);

    for (auto& a : attn_modal) out.uncert_attn.push_back(a);
    for (auto& a : attn_cross) out.uncert_attn.push_back(a);
    for (auto& a : attn_fuse) out.uncert_attn.push_back(a);
    return out;
  }

  // Branch tokens -> full search grid (eliminated positions as zero rows) ->
  // head maps.
  MapsOut<T> branch_maps(Ctx<T>& ctx, Val<T> branch_tokens, const std::vector<int>& search_live) const {
    const int gs = cfg.grid_side();
    Val<T> search_tokens = rows(branch_tokens, 0, static_cast<int>(search_live.size()));
    Val<T> grid = static_cast<int>(search_live.size()) == gs * gs
                      ? search_tokens
                      : scatter_rows(search_tokens, search_live, gs * gs);
    return predict_maps(ctx, grid, gs, gs, head_);
  }

  BranchGraph<T> branch_losses(Ctx<T>& ctx, const MapsOut<T>& maps, const TrainTarget<T>& target) const {
    const int gs = cfg.grid_side();
    BranchGraph<T> b;
    b.maps = maps;
    b.cls_loss = focal_loss(ctx, maps.cls, target.response_map);
    b.pred_box = box_at_cell(ctx, maps, target.gt_cell, gs, cfg.backbone.patch_size,
                             cfg.backbone.search_side);
    Val<T> gt = ctx.c(target.gt_box);
    b.iou_loss = giou_loss(ctx, b.pred_box, gt);
    b.l1_loss = l1_center_size(ctx, b.pred_box, gt, cfg.backbone.search_side);
    b.total = add(b.cls_loss, add(scale(b.iou_loss, static_cast<T>(cfg.loss.lambda_iou)),
                                  scale(b.l1_loss, static_cast<T>(cfg.loss.lambda_l1))));
    return b;
  }

  TrainGraph<T> forward_train(Ctx<T>& ctx, const ModelInputs<T>& in, const TrainTarget<T>& target,
                              Rng& noise) const {
    CoreOut core = forward_core(ctx, in, /*training=*/true, &noise);
    TrainGraph<T> g;
    g.trace = std::move(core.trace);
    g.uncert_attn = std::move(core.uncert_attn);
    if (cfg.variant == "baseline") {
      g.fusion = branch_losses(ctx, branch_maps(ctx, core.single, core.search_live), target);
      g.kl_v = scalar_const<T>(ctx.tape, T(0));
      g.kl_cm = scalar_const<T>(ctx.tape, T(0));
      g.total = g.fusion.total;
      return g;
    }
    g.fusion = branch_losses(ctx, branch_maps(ctx, core.fused, core.search_live), target);
    g.cross_modal = branch_losses(ctx, branch_maps(ctx, core.cross_sample, core.search_live), target);
    g.rgb = branch_losses(ctx, branch_maps(ctx, core.rgb_sample, core.search_live), target);
    g.kl_v = kl_to_standard_normal(core.modal_g);
    g.kl_cm = kl_to_standard_normal(core.cross_g);
    Val<T> branch_sum = add(g.fusion.total, add(g.cross_modal.total, g.rgb.total));
    g.total = add(branch_sum, scale(add(g.kl_v, g.kl_cm), static_cast<T>(cfg.loss.alpha_kl)));
    return g;
  }

  // Deterministic inference over a frozen parameter snapshot: the fusion
  // branch only, s = mu unless sampling at eval is configured.
  InferenceOut forward_infer(const ModelInputs<T>& in, Rng* noise = nullptr) const {
    Tape<T> tape(/*grad_enabled=*/false);
    // const_cast is confined here: a grad-disabled tape never writes params.
    Ctx<T> ctx{tape, const_cast<ParamStore<T>&>(store), nullptr};
    Rng fallback(0);
    CoreOut core = forward_core(ctx, in, /*training=*/false,
                                noise != nullptr ? noise : &fallback);
    Val<T> branch = cfg.variant == "baseline" ? core.single : core.fused;
    MapsOut<T> maps = branch_maps(ctx, branch, core.search_live);

    const int gs = cfg.grid_side();
    InferenceOut out;
    out.maps.grid_h = gs;
    out.maps.grid_w = gs;
    out.maps.cell_px = cfg.backbone.patch_size;
    out.maps.patch_side = cfg.backbone.search_side;
    const auto& cls = maps.cls.m();
    const auto& off = maps.off.m();
    const auto& sz = maps.size.m();
    out.maps.cls.resize(static_cast<size_t>(gs) * gs);
    out.maps.off_x.resize(out.maps.cls.size());
    out.maps.off_y.resize(out.maps.cls.size());
    out.maps.size_w.resize(out.maps.cls.size());
    out.maps.size_h.resize(out.maps.cls.size());
    for (int i = 0; i < gs * gs; ++i) {
      out.maps.cls[static_cast<size_t>(i)] = static_cast<double>(cls(i, 0));
      out.maps.off_x[static_cast<size_t>(i)] = static_cast<double>(off(i, 0));
      out.maps.off_y[static_cast<size_t>(i)] = static_cast<double>(off(i, 1));
      out.maps.size_w[static_cast<size_t>(i)] = static_cast<double>(sz(i, 0));
      out.maps.size_h[static_cast<size_t>(i)] = static_cast<double>(sz(i, 1));
    }
    double peak = 0;
    decode_box(out.maps, cfg.window_penalty, &peak);
    out.confidence = peak;
    return out;
  }

  const VitP<T>& vit() const { return vit_; }
  const HeadP<T>& head() const { return head_; }
  const UncertaintyP<T>& modal_unc() const { return modal_unc_; }
  const UncertaintyP<T>& cross_unc() const { return cross_unc_; }
  const FusionP<T>& fusion_params() const { return fusion_; }

 private:
  static TokenLayout::RegionInfo make_region(Region tag, int grid) {
    TokenLayout::RegionInfo r;
    r.tag = tag;
    r.grid_h = grid;
    r.grid_w = grid;
    r.full_count = grid * grid;
    r.live.resize(static_cast<size_t>(grid) * grid);
    for (int i = 0; i < grid * grid; ++i) r.live[static_cast<size_t>(i)] = i;
    return r;
  }

  Val<T> fuse_input_pixels(Ctx<T>& ctx, const Mat<T>& rgb, const Mat<T>& ev) const {
    Val<T> both = concat_cols(std::vector<Val<T>>{ctx.c(rgb), ctx.c(ev)});
    return linear(ctx, both, input_fuse_);
  }

  PatchEmbedP<T> embed_rgb_, embed_ev_, embed_base_;
  LinearP<T> input_fuse_;
  VitP<T> vit_;
  UncertaintyP<T> modal_unc_, cross_unc_;
  FusionP<T> fusion_;
  HeadP<T> head_;
};

// Pixel-matrix conversion: planar Image -> (h*w x channels), row-major pixels.
template <typename T>
Mat<T> image_to_pixel_matrix(const Image& img) {
  Mat<T> m(static_cast<Eigen::Index>(img.height) * img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        m(static_cast<Eigen::Index>(y) * img.width + x, c) = static_cast<T>(img.at(c, y, x));
  return m;
}

// --- checkpoint I/O ---------------------------------------------------------

struct CheckpointContent {
  std::string config_summary;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Mat<double>>> params;
  std::vector<std::pair<std::string, Mat<double>>> aux;  // e.g. optimizer state
};

void save_checkpoint_file(const std::filesystem::path& path, const CheckpointContent& content);
CheckpointContent load_checkpoint_file(const std::filesystem::path& path);

template <typename T>
CheckpointContent checkpoint_from_store(const ParamStore<T>& store, const std::string& summary) {
  CheckpointContent c;
  c.config_summary = summary;
  for (int i = 0; i < store.size(); ++i)
    c.params.emplace_back(store.name(i), store.value(i).template cast<double>());
  return c;
}

// Shape- and name-audited load; throws DataError on any mismatch so a
// half-written or incompatible file never partially applies.
template <typename T>
void load_into_store(const CheckpointContent& c, ParamStore<T>& store,
                     const std::string& expect_summary) {
  if (c.config_summary != expect_summary)
    throw DataError("checkpoint incompatible: built for '" + c.config_summary +
                    "', model is '" + expect_summary + "'");
  if (static_cast<int>(c.params.size()) != store.size())
    throw DataError("checkpoint incompatible: parameter count mismatch");
  for (const auto& [name, value] : c.params) {
    const int idx = store.find(name);
    if (idx < 0) throw DataError("checkpoint incompatible: unknown parameter " + name);
    if (store.value(idx).rows() != value.rows() || store.value(idx).cols() != value.cols())
      throw DataError("checkpoint incompatible: shape mismatch for " + name);
  }
  for (const auto& [name, value] : c.params)
    store.value(store.find(name)) = value.template cast<T>();
}

}  // namespace uret
