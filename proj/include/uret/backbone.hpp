#pragma once

#include <array>

#include "uret/nn.hpp"

namespace uret {

enum class Region { kRgbTemplate = 0, kRgbSearch = 1, kEvTemplate = 2, kEvSearch = 3 };

inline bool is_template(Region r) {
  return r == Region::kRgbTemplate || r == Region::kEvTemplate;
}
inline bool is_rgb(Region r) {
  return r == Region::kRgbTemplate || r == Region::kRgbSearch;
}

// Bookkeeping for the concatenated token sequence. Regions appear in enum
// order; `live` holds the original within-region indices that survive, in
// ascending order.
struct TokenLayout {
  struct RegionInfo {
    Region tag;
    int grid_h = 0;
    int grid_w = 0;
    int full_count = 0;
    std::vector<int> live;
  };
  std::vector<RegionInfo> regions;

  int total_live() const {
    int n = 0;
    for (const auto& r : regions) n += static_cast<int>(r.live.size());
    return n;
  }
  int offset_of(size_t region_index) const {
    int off = 0;
    for (size_t i = 0; i < region_index; ++i) off += static_cast<int>(regions[i].live.size());
    return off;
  }
  const RegionInfo* find(Region tag) const {
    for (const auto& r : regions)
      if (r.tag == tag) return &r;
    return nullptr;
  }
  int region_index(Region tag) const {
    for (size_t i = 0; i < regions.size(); ++i)
      if (regions[i].tag == tag) return static_cast<int>(i);
    return -1;
  }
};

struct EliminationEvent {
  int block = 0;
  Region region;
  std::vector<int> kept;  // original within-region indices, ascending
};

// Per-modality ranking of search tokens by the mean attention they receive
// from the same modality's template tokens. Keeps ceil(keep_ratio * count)
// top-ranked tokens; ties keep the lower original index; template regions are
// never eliminated. `mean_attn` is the heads-averaged (n x n) attention of
// the current block over the current live ordering.
template <typename T>
std::vector<EliminationEvent> rank_eliminations(const Mat<T>& mean_attn, const TokenLayout& layout,
                                                double keep_ratio, int block) {
  if (!(keep_ratio > 0.0) || keep_ratio > 1.0)
    throw std::invalid_argument("keep_ratio must be in (0, 1]");
  std::vector<EliminationEvent> events;
  for (size_t ri = 0; ri < layout.regions.size(); ++ri) {
    const auto& region = layout.regions[ri];
    if (is_template(region.tag) || region.live.empty()) continue;
    // template rows of the same modality
    std::vector<int> template_rows;
    for (size_t qi = 0; qi < layout.regions.size(); ++qi) {
      const auto& q = layout.regions[qi];
      if (!is_template(q.tag) || is_rgb(q.tag) != is_rgb(region.tag)) continue;
      const int off = layout.offset_of(qi);
      for (size_t k = 0; k < q.live.size(); ++k) template_rows.push_back(off + static_cast<int>(k));
    }
    const int col0 = layout.offset_of(ri);
    const int count = static_cast<int>(region.live.size());
    std::vector<std::pair<double, int>> scored(static_cast<size_t>(count));
    for (int c = 0; c < count; ++c) {
      double s = 0;
      for (int r : template_rows) s += static_cast<double>(mean_attn(r, col0 + c));
      scored[static_cast<size_t>(c)] = {template_rows.empty() ? 0.0 : s / template_rows.size(),
                                        region.live[static_cast<size_t>(c)]};
    }
    const int keep = static_cast<int>(std::ceil(keep_ratio * count));
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    EliminationEvent ev;
    ev.block = block;
    ev.region = region.tag;
    for (int k = 0; k < keep; ++k) ev.kept.push_back(scored[static_cast<size_t>(k)].second);
    std::sort(ev.kept.begin(), ev.kept.end());
    events.push_back(std::move(ev));
  }
  return events;
}

// Applies elimination events: returns absolute row indices to keep (current
// ordering) and rewrites the layout's live lists.
inline std::vector<int> apply_eliminations(TokenLayout& layout,
                                           const std::vector<EliminationEvent>& events) {
  std::vector<int> keep_abs;
  for (size_t ri = 0; ri < layout.regions.size(); ++ri) {
    auto& region = layout.regions[ri];
    const int off = layout.offset_of(ri);
    const EliminationEvent* ev = nullptr;
    for (const auto& e : events)
      if (e.region == region.tag) ev = &e;
    if (ev == nullptr) {
      for (size_t k = 0; k < region.live.size(); ++k) keep_abs.push_back(off + static_cast<int>(k));
      continue;
    }
    size_t cursor = 0;
    std::vector<int> kept_positions;
    for (size_t k = 0; k < region.live.size(); ++k) {
      if (cursor < ev->kept.size() && region.live[k] == ev->kept[cursor]) {
        kept_positions.push_back(off + static_cast<int>(k));
        ++cursor;
      }
    }
    if (cursor != ev->kept.size())
      throw std::invalid_argument("apply_eliminations: kept index not live");
    for (int p : kept_positions) keep_abs.push_back(p);
    region.live = ev->kept;
  }
  return keep_abs;
}

struct BackboneConfig {
  int dim = 192;
  int depth = 6;
  int heads = 3;
  int patch_size = 16;
  double mlp_ratio = 4.0;
  std::vector<int> elim_blocks = {2, 4};
  double keep_ratio = 0.7;
  int template_side = 96;
  int search_side = 192;

  int template_tokens() const {
    const int g = template_side / patch_size;
    return g * g;
  }
  int search_tokens() const {
    const int g = search_side / patch_size;
    return g * g;
  }
};

// Patch projection plus learned per-region absolute positional embeddings.
template <typename T>
struct PatchEmbedP {
  LinearP<T> proj;
  int pos_template = -1;
  int pos_search = -1;
};

template <typename T>
PatchEmbedP<T> make_patch_embed(ParamStore<T>& store, const std::string& name,
                                const BackboneConfig& cfg, Rng& rng) {
  PatchEmbedP<T> p;
  const int in_dim = cfg.patch_size * cfg.patch_size * 3;
  p.proj = make_linear(store, name + ".proj", in_dim, cfg.dim, rng);
  p.pos_template = store.add(name + ".pos_template",
                             trunc_normal<T>(cfg.template_tokens(), cfg.dim, T(0.02), rng));
  p.pos_search = store.add(name + ".pos_search",
                           trunc_normal<T>(cfg.search_tokens(), cfg.dim, T(0.02), rng));
  return p;
}

// pixels: (side*side rows x 3 cols) in [0,1]. Returns one token per patch.
template <typename T>
Val<T> patch_embed(Ctx<T>& ctx, Val<T> pixels, int side, const PatchEmbedP<T>& p,
                   const BackboneConfig& cfg, bool is_template_region) {
  if (side % cfg.patch_size != 0)
    throw ConfigError("patch_embed: side " + std::to_string(side) + " not divisible by patch size " +
                      std::to_string(cfg.patch_size));
  Val<T> patches = patchify(pixels, side, side, cfg.patch_size);
  Val<T> tokens = linear(ctx, patches, p.proj);
  Val<T> pos = ctx.p(is_template_region ? p.pos_template : p.pos_search);
  return add(tokens, pos);
}

template <typename T>
struct VitBlockP {
  LayerNormP<T> ln1;
  MhaP<T> attn;
  LayerNormP<T> ln2;
  MlpP<T> mlp;
};

template <typename T>
struct VitP {
  std::vector<VitBlockP<T>> blocks;
};

template <typename T>
VitP<T> make_vit(ParamStore<T>& store, const std::string& name, const BackboneConfig& cfg,
                 Rng& rng) {
  VitP<T> vit;
  const int hidden = static_cast<int>(std::lround(cfg.dim * cfg.mlp_ratio));
  for (int b = 0; b < cfg.depth; ++b) {
    const std::string bn = name + ".block" + std::to_string(b);
    VitBlockP<T> blk;
    blk.ln1 = make_layer_norm(store, bn + ".ln1", cfg.dim);
    blk.attn = make_mha(store, bn + ".attn", cfg.dim, cfg.heads, rng);
    blk.ln2 = make_layer_norm(store, bn + ".ln2", cfg.dim);
    blk.mlp = make_mlp(store, bn + ".mlp", cfg.dim, hidden, rng);
    vit.blocks.push_back(blk);
  }
  return vit;
}

template <typename T>
struct EncodeTrace {
  // heads-kept attention probabilities per block (softmax outputs)
  std::vector<std::vector<Val<T>>> attn;
  std::vector<EliminationEvent> eliminations;
};

// Pre-norm transformer over the concatenated dual-modality sequence with
// in-flight token elimination at the configured blocks.
template <typename T>
Val<T> joint_encode(Ctx<T>& ctx, Val<T> tokens, TokenLayout& layout, const VitP<T>& vit,
                    const BackboneConfig& cfg, EncodeTrace<T>* trace = nullptr) {
  Val<T> x = tokens;
  for (size_t b = 0; b < vit.blocks.size(); ++b) {
    const auto& blk = vit.blocks[b];
    Val<T> n1 = layer_norm(ctx, x, blk.ln1);
    MhaOut<T> att = mha(ctx, n1, n1, n1, blk.attn);
    x = add(x, att.out);
    Val<T> n2 = layer_norm(ctx, x, blk.ln2);
    x = add(x, mlp(ctx, n2, blk.mlp));
    if (trace != nullptr) trace->attn.push_back(att.attn);

    const bool elim_here =
        std::find(cfg.elim_blocks.begin(), cfg.elim_blocks.end(), static_cast<int>(b)) !=
        cfg.elim_blocks.end();
    if (elim_here && cfg.keep_ratio < 1.0) {
      Mat<T> mean_attn = att.attn[0].m();
      for (size_t h = 1; h < att.attn.size(); ++h) mean_attn += att.attn[h].m();
      mean_attn /= static_cast<T>(att.attn.size());
      auto events = rank_eliminations(mean_attn, layout, cfg.keep_ratio, static_cast<int>(b));
      std::vector<int> keep_abs = apply_eliminations(layout, events);
      x = gather_rows(x, keep_abs);
      if (trace != nullptr)
        for (auto& e : events) trace->eliminations.push_back(std::move(e));
    }
  }
  return x;
}

}  // namespace uret
