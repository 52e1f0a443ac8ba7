#include "pdpp/denoiser.hpp"

#include <algorithm>

#include "json.hpp"

namespace pdpp {

namespace {

constexpr int kResKernel = 3;
constexpr int kResampleKernel = 2;
constexpr int kMlpRatio = 4;

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kUnet: return "unet3";
    case Variant::kUnetAttn: return "unet_attn2";
    case Variant::kTransformer: return "transformer12";
  }
  return "unet3";
}

std::string to_string(MoeSite s) { return s == MoeSite::kAttention ? "attention" : "convolution"; }
std::string to_string(MoeRouting r) { return r == MoeRouting::kDirect ? "direct" : "learned"; }

Variant parse_variant(const std::string& s) {
  if (s == "unet3" || s == "unet") return Variant::kUnet;
  if (s == "unet_attn2" || s == "unet_attn") return Variant::kUnetAttn;
  if (s == "transformer12" || s == "transformer") return Variant::kTransformer;
  fail(ErrorCode::kInvalidArgument, "unknown denoiser variant '" + s + "' (unet3|unet_attn2|transformer12)");
}

MoeSite parse_moe_site(const std::string& s) {
  if (s == "attention") return MoeSite::kAttention;
  if (s == "convolution") return MoeSite::kConvolution;
  fail(ErrorCode::kInvalidArgument, "unknown expert site '" + s + "' (attention|convolution)");
}

MoeRouting parse_moe_routing(const std::string& s) {
  if (s == "direct") return MoeRouting::kDirect;
  if (s == "learned") return MoeRouting::kLearned;
  fail(ErrorCode::kInvalidArgument, "unknown expert routing '" + s + "' (direct|learned)");
}

int DenoiserConfig::resolved_time_dim() const {
  if (time_dim > 0) return time_dim;
  if (variant == Variant::kTransformer) return width;
  return widths.empty() ? 0 : widths.front();
}

void DenoiserConfig::validate() const {
  layout.validate();
  require(diffusion_steps >= 1, ErrorCode::kInvalidArgument, "diffusion_steps must be >= 1");
  require(heads >= 1, ErrorCode::kInvalidArgument, "attention heads must be >= 1");
  const int td = resolved_time_dim();
  require(td >= 2 && td % 2 == 0, ErrorCode::kInvalidArgument, "time embedding dim must be even and >= 2");
  const bool moe_layout = layout.horizon_mode == HorizonCond::kMoe;
  require(moe_layout == moe.has_value(), ErrorCode::kInvalidArgument,
          moe_layout ? "expert horizon conditioning needs an expert configuration"
                     : "expert configuration given but horizon conditioning is not 'moe'");
  if (variant == Variant::kTransformer) {
    require(layers >= 1 && width >= 1, ErrorCode::kInvalidArgument, "transformer needs layers >= 1 and width >= 1");
    require(width % heads == 0, ErrorCode::kInvalidArgument,
            std::to_string(heads) + " heads do not divide transformer width " + std::to_string(width));
    require(!moe, ErrorCode::kInvalidArgument, "expert routing is only available for the UNet variants");
    return;
  }
  require(!widths.empty(), ErrorCode::kInvalidArgument, "UNet needs at least one level width");
  for (int w : widths) {
    require(w >= 1 && w % groups == 0, ErrorCode::kInvalidArgument,
            "UNet width " + std::to_string(w) + " is not divisible by " + std::to_string(groups) + " groups");
    if (variant == Variant::kUnetAttn)
      require(w % heads == 0, ErrorCode::kInvalidArgument,
              std::to_string(heads) + " heads do not divide width " + std::to_string(w));
  }
  const int downs = static_cast<int>(widths.size()) - 1;
  for (int h : layout.horizons)
    require(h - 1 >= downs, ErrorCode::kInvalidArgument,
            "horizon " + std::to_string(h) + " supports at most " + std::to_string(h - 1) +
                " downsample levels, model has " + std::to_string(downs));
  if (moe && moe->site == MoeSite::kAttention)
    require(variant == Variant::kUnetAttn, ErrorCode::kInvalidArgument,
            "attention expert site needs the unet_attn2 variant");
}

std::string DenoiserConfig::to_json() const {
  nlohmann::json j;
  j["kind"] = "denoiser";
  j["variant"] = to_string(variant);
  j["layout"] = nlohmann::json::parse(layout.to_json());
  j["widths"] = widths;
  j["layers"] = layers;
  j["width"] = width;
  j["heads"] = heads;
  j["groups"] = groups;
  j["time_dim"] = time_dim;
  j["diffusion_steps"] = diffusion_steps;
  j["schedule"] = schedule;
  if (moe)
    j["moe"] = {{"site", to_string(moe->site)}, {"routing", to_string(moe->routing)}};
  else
    j["moe"] = nullptr;
  j["seed"] = seed;
  return j.dump();
}

DenoiserConfig DenoiserConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    DenoiserConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.layout = Layout::from_json(j.at("layout").dump());
    c.widths = j.at("widths").get<std::vector<int>>();
    c.layers = j.at("layers").get<int>();
    c.width = j.at("width").get<int>();
    c.heads = j.at("heads").get<int>();
    c.groups = j.at("groups").get<int>();
    c.time_dim = j.at("time_dim").get<int>();
    c.diffusion_steps = j.at("diffusion_steps").get<int>();
    c.schedule = j.at("schedule").get<std::string>();
    if (!j.at("moe").is_null())
      c.moe = MoeConfig{parse_moe_site(j["moe"].at("site").get<std::string>()),
                        parse_moe_routing(j["moe"].at("routing").get<std::string>())};
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("denoiser metadata: ") + e.what());
  }
}

DenoiserConfig denoiser_preset(Variant variant, const Layout& layout, bool full_scale) {
  DenoiserConfig c;
  c.variant = variant;
  c.layout = layout;
  switch (variant) {
    case Variant::kUnet:
      c.widths = full_scale ? std::vector<int>{256, 512, 1024} : std::vector<int>{32, 64, 128};
      break;
    case Variant::kUnetAttn:
      c.widths = full_scale ? std::vector<int>{512, 1024} : std::vector<int>{64, 128};
      c.heads = full_scale ? 32 : 4;
      break;
    case Variant::kTransformer:
      c.layers = full_scale ? 12 : 4;
      c.width = full_scale ? 1024 : 128;
      c.heads = full_scale ? 32 : 4;
      break;
  }
  if (layout.horizon_mode == HorizonCond::kMoe)
    c.moe = MoeConfig{variant == Variant::kUnetAttn ? MoeSite::kAttention : MoeSite::kConvolution,
                      MoeRouting::kDirect};
  return c;
}

namespace {

// A block that is either shared or replicated once per supported horizon.
template <class T, class B>
struct Routed {
  std::vector<B> experts;
  std::optional<RoutingGate<T>> gate;

  bool empty() const { return experts.empty(); }

  template <class F>
  Var apply(Graph<T>& g, int hidx, F&& f) const {
    if (experts.size() == 1) return f(experts[0]);
    if (!gate) return f(experts[static_cast<std::size_t>(hidx)]);
    std::vector<Var> outs;
    outs.reserve(experts.size());
    for (const B& e : experts) outs.push_back(f(e));
    return moe_combine(g, std::span<const Var>(outs), (*gate)(g, hidx));
  }
};

}  // namespace

template <class T>
struct Denoiser<T>::Net {
  using Res = ResidualBlock<T>;
  using Attn = AttentionBlock<T>;

  struct Level {
    Routed<T, Res> res1;
    Routed<T, Res> res2;
    Routed<T, Attn> attn;
    Conv1d<T> down;
    ConvTranspose1d<T> up;
    bool resample = false;
  };

  struct Block {
    SelfAttention<T> attn;
    Linear<T> mlp1;
    Linear<T> mlp2;
    Linear<T> ada;
  };

  TimeEmbedding<T> temb;
  // UNet
  std::vector<Level> downs;
  std::vector<Level> ups;
  Routed<T, Res> mid1;
  Routed<T, Res> mid2;
  Routed<T, Attn> mid_attn;
  ConvBlock<T> final_block;
  Conv1d<T> final_conv;
  // Transformer
  Linear<T> embed;
  Parameter<T>* pos = nullptr;
  std::vector<Block> blocks;
  Linear<T> final_ada;
  Linear<T> head;

  std::vector<const RoutingGate<T>*> gates;
};

namespace {

template <class T, class B, class F>
Routed<T, B> make_routed(ParameterStore<T>& store, const DenoiserConfig& cfg, bool expert_site,
                         const std::string& name, Rng& rng, F&& make) {
  Routed<T, B> r;
  if (!expert_site || !cfg.moe) {
    r.experts.push_back(make(name));
    return r;
  }
  const auto& hs = cfg.layout.horizons;
  for (int h : hs) r.experts.push_back(make(name + ".expert_t" + std::to_string(h)));
  if (cfg.moe->routing == MoeRouting::kLearned)
    r.gate.emplace(store, name + ".gate", static_cast<int>(hs.size()), static_cast<int>(hs.size()), rng);
  return r;
}

}  // namespace

template <class T>
Denoiser<T>::Denoiser(const DenoiserConfig& cfg) : cfg_(cfg), net_(std::make_unique<Net>()) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  Net& n = *net_;
  const int R = cfg_.layout.rows();
  const int td = cfg_.resolved_time_dim();
  n.temb = TimeEmbedding<T>(store_, "time", td, rng);

  if (cfg_.variant == Variant::kTransformer) {
    const int D = cfg_.width;
    const int max_t = *std::max_element(cfg_.layout.horizons.begin(), cfg_.layout.horizons.end());
    n.embed = Linear<T>(store_, "embed", R, D, rng);
    n.pos = &store_.add("pos", {max_t, D}, D, rng);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = "block" + std::to_string(l);
      typename Net::Block b;
      b.attn = SelfAttention<T>(store_, p + ".attn", D, cfg_.heads, rng);
      b.mlp1 = Linear<T>(store_, p + ".mlp1", D, kMlpRatio * D, rng);
      b.mlp2 = Linear<T>(store_, p + ".mlp2", kMlpRatio * D, D, rng);
      b.ada = Linear<T>(store_, p + ".ada", td, 6 * D, rng);
      n.blocks.push_back(b);
    }
    n.final_ada = Linear<T>(store_, "final.ada", td, 2 * D, rng);
    n.head = Linear<T>(store_, "final.head", D, R, rng);
    return;
  }

  const bool attn = cfg_.variant == Variant::kUnetAttn;
  const Activation act = attn ? Activation::kSilu : Activation::kMish;
  const bool conv_site = cfg_.moe && cfg_.moe->site == MoeSite::kConvolution;
  const bool attn_site = cfg_.moe && cfg_.moe->site == MoeSite::kAttention;
  const auto& w = cfg_.widths;
  const int D = static_cast<int>(w.size());

  auto res = [&](const std::string& name, int in, int out) {
    return make_routed<T, ResidualBlock<T>>(store_, cfg_, conv_site, name, rng, [&](const std::string& nm) {
      return ResidualBlock<T>(store_, nm, in, out, td, kResKernel, cfg_.groups, act, rng);
    });
  };
  auto att = [&](const std::string& name, int ch) {
    return make_routed<T, AttentionBlock<T>>(store_, cfg_, attn_site, name, rng, [&](const std::string& nm) {
      return AttentionBlock<T>(store_, nm, ch, cfg_.heads, cfg_.groups, rng);
    });
  };

  for (int i = 0; i < D; ++i) {
    const std::string p = "down" + std::to_string(i);
    const int in = i == 0 ? R : w[i - 1];
    typename Net::Level lv;
    lv.res1 = res(p + ".res1", in, w[i]);
    lv.res2 = res(p + ".res2", w[i], w[i]);
    if (attn) lv.attn = att(p + ".attn", w[i]);
    lv.resample = i < D - 1;
    if (lv.resample) lv.down = Conv1d<T>(store_, p + ".down", w[i], w[i], kResampleKernel, 1, 0, rng);
    n.downs.push_back(std::move(lv));
  }
  n.mid1 = res("mid.res1", w[D - 1], w[D - 1]);
  if (attn) n.mid_attn = att("mid.attn", w[D - 1]);
  n.mid2 = res("mid.res2", w[D - 1], w[D - 1]);
  for (int i = D - 2; i >= 0; --i) {
    const std::string p = "up" + std::to_string(i);
    typename Net::Level lv;
    lv.res1 = res(p + ".res1", 2 * w[i + 1], w[i]);
    lv.res2 = res(p + ".res2", w[i], w[i]);
    if (attn) lv.attn = att(p + ".attn", w[i]);
    lv.resample = true;
    lv.up = ConvTranspose1d<T>(store_, p + ".up", w[i], w[i], kResampleKernel, rng);
    n.ups.push_back(std::move(lv));
  }
  n.final_block = ConvBlock<T>(store_, "final.block", w[0], w[0], kResKernel, cfg_.groups, act, rng);
  n.final_conv = Conv1d<T>(store_, "final.conv", w[0], R, 1, 1, 0, rng);

  auto collect = [&n](const auto& r) {
    if (r.gate) n.gates.push_back(&*r.gate);
  };
  for (const auto& lv : n.downs) {
    collect(lv.res1), collect(lv.res2), collect(lv.attn);
  }
  collect(n.mid1), collect(n.mid_attn), collect(n.mid2);
  for (const auto& lv : n.ups) {
    collect(lv.res1), collect(lv.res2), collect(lv.attn);
  }
}

template <class T>
Denoiser<T>::~Denoiser() = default;

template <class T>
Var Denoiser<T>::forward(Graph<T>& g, Var x, std::span<const int> steps) const {
  const Shape xs = g.shape(x);
  require(xs.size() == 3, ErrorCode::kShapeMismatch, "denoiser input must be [B, rows, T], got " + shape_str(xs));
  const int B = xs[0], R = xs[1], L = xs[2];
  require(R == cfg_.layout.rows(), ErrorCode::kShapeMismatch,
          "denoiser input has " + std::to_string(R) + " rows, layout expects " + std::to_string(cfg_.layout.rows()));
  require(static_cast<int>(steps.size()) == B, ErrorCode::kShapeMismatch, "one diffusion step per sample required");
  for (int s : steps)
    require(s >= 0 && s <= cfg_.diffusion_steps, ErrorCode::kInvalidArgument,
            "diffusion step " + std::to_string(s) + " outside [0, " + std::to_string(cfg_.diffusion_steps) + "]");
  const int hidx = cfg_.layout.horizon_index(L);
  const Net& n = *net_;
  Var te = n.temb(g, steps);

  if (cfg_.variant == Variant::kTransformer) {
    const int D = cfg_.width;
    require(L <= n.pos->value.dim(0), ErrorCode::kInvalidArgument,
            "horizon " + std::to_string(L) + " exceeds the positional table (" + std::to_string(n.pos->value.dim(0)) +
                ")");
    Var h = n.embed(g, g.permute(x, {0, 2, 1}));  // [B, L, D]
    h = g.add(h, g.reshape(g.slice(g.param(*n.pos), 0, 0, L), {1, L, D}));
    Var st = g.silu(te);
    auto chunk = [&](Var m, int k) { return g.reshape(g.slice(m, 1, k * D, D), {B, 1, D}); };
    auto modulate = [&](Var v, Var shift, Var scale) {
      Var ln = g.layer_norm(v, Var{}, Var{});
      return g.add(g.add(ln, g.mul(ln, scale)), shift);
    };
    for (const auto& b : n.blocks) {
      Var m = b.ada(g, st);  // [B, 6D]
      Var a = b.attn(g, modulate(h, chunk(m, 0), chunk(m, 1)));
      h = g.add(h, g.mul(a, chunk(m, 2)));
      Var f = b.mlp2(g, g.silu(b.mlp1(g, modulate(h, chunk(m, 3), chunk(m, 4)))));
      h = g.add(h, g.mul(f, chunk(m, 5)));
    }
    Var m = n.final_ada(g, st);
    h = n.head(g, modulate(h, chunk(m, 0), chunk(m, 1)));  // [B, L, R]
    return g.permute(h, {0, 2, 1});
  }

  const int D = static_cast<int>(cfg_.widths.size());
  require(L - 1 >= D - 1, ErrorCode::kInvalidArgument,
          "horizon " + std::to_string(L) + " supports at most " + std::to_string(L - 1) +
              " downsample levels, model has " + std::to_string(D - 1));
  auto run_res = [&](const Routed<T, ResidualBlock<T>>& r, Var v) {
    return r.apply(g, hidx, [&](const ResidualBlock<T>& blk) { return blk(g, v, te); });
  };
  auto run_attn = [&](const Routed<T, AttentionBlock<T>>& r, Var v) {
    if (r.empty()) return v;
    return r.apply(g, hidx, [&](const AttentionBlock<T>& blk) { return blk(g, v); });
  };

  Var h = x;
  std::vector<Var> skips;
  for (int i = 0; i < D; ++i) {
    const auto& lv = n.downs[i];
    h = run_res(lv.res1, h);
    h = run_res(lv.res2, h);
    h = run_attn(lv.attn, h);
    if (i > 0) skips.push_back(h);
    if (lv.resample) h = lv.down(g, h);
  }
  h = run_res(n.mid1, h);
  h = run_attn(n.mid_attn, h);
  h = run_res(n.mid2, h);
  for (const auto& lv : n.ups) {
    const Var parts[2] = {h, skips.back()};
    skips.pop_back();
    h = g.concat(std::span<const Var>(parts, 2), 1);
    h = run_res(lv.res1, h);
    h = run_res(lv.res2, h);
    h = run_attn(lv.attn, h);
    h = lv.up(g, h);
  }
  h = n.final_block(g, h);
  return n.final_conv(g, h);
}

template <class T>
ArrayT<T> Denoiser<T>::denoise(const ArrayT<T>& x, std::span<const int> steps) const {
  Graph<T> g(false);
  Var out = forward(g, g.constant(x), steps);
  return g.value(out);
}

template <class T>
std::vector<std::vector<double>> Denoiser<T>::routing_weights(int horizon) const {
  std::vector<std::vector<double>> out;
  if (net_->gates.empty()) return out;
  const int hidx = cfg_.layout.horizon_index(horizon);
  for (const RoutingGate<T>* gate : net_->gates) {
    Graph<T> g(false);
    const ArrayT<T>& w = g.value((*gate)(g, hidx));
    out.emplace_back(w.data(), w.data() + w.size());
  }
  return out;
}

template class Denoiser<float>;
template class Denoiser<double>;

Checkpoint denoiser_checkpoint(const Denoiser<float>& model) {
  return Checkpoint{model.config().to_json(), export_parameters(model.params())};
}

std::unique_ptr<Denoiser<float>> denoiser_from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  require(meta.value("kind", "") == "denoiser", ErrorCode::kFormat, "checkpoint does not hold a denoiser");
  auto model = std::make_unique<Denoiser<float>>(DenoiserConfig::from_json(ckpt.metadata));
  import_parameters(model->params(), ckpt.arrays);
  return model;
}

void save_denoiser(const std::string& path, const Denoiser<float>& model) {
  save_checkpoint(path, denoiser_checkpoint(model));
}

std::unique_ptr<Denoiser<float>> load_denoiser(const std::string& path) {
  return denoiser_from_checkpoint(load_checkpoint(path));
}

}  // namespace pdpp
