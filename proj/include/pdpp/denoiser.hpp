#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdpp/checkpoint.hpp"
#include "pdpp/conditioning.hpp"
#include "pdpp/layers.hpp"

namespace pdpp {

enum class Variant { kUnet, kUnetAttn, kTransformer };
enum class MoeSite { kAttention, kConvolution };
enum class MoeRouting { kDirect, kLearned };

std::string to_string(Variant v);
std::string to_string(MoeSite s);
std::string to_string(MoeRouting r);
// Accepts "unet3"/"unet", "unet_attn2"/"unet_attn", "transformer12"/"transformer".
Variant parse_variant(const std::string& s);
MoeSite parse_moe_site(const std::string& s);
MoeRouting parse_moe_routing(const std::string& s);

struct MoeConfig {
  MoeSite site = MoeSite::kAttention;
  MoeRouting routing = MoeRouting::kDirect;
  bool operator==(const MoeConfig&) const = default;
};

struct DenoiserConfig {
  Variant variant = Variant::kUnet;
  Layout layout;
  // UNet level widths; the number of levels is widths.size().
  std::vector<int> widths;
  // Transformer depth and width.
  int layers = 4;
  int width = 128;
  int heads = 4;
  int groups = 8;
  int time_dim = 0;  // 0 = widths[0] (UNet) or width (transformer)
  int diffusion_steps = 200;
  std::string schedule = "cosine";
  // Expert per supported horizon; required exactly when the layout routes
  // horizons through experts.
  std::optional<MoeConfig> moe;
  std::uint64_t seed = 0;

  int resolved_time_dim() const;
  void validate() const;
  std::string to_json() const;
  static DenoiserConfig from_json(const std::string& text);
  bool operator==(const DenoiserConfig&) const = default;
};

// Desk scale: UNet 32/64/128, UNet-attention 64/128 with 4 heads, transformer
// 4 x 128 with 4 heads. Full scale: 256/512/1024, 512/1024 with 32 heads,
// 12 x 1024 with 32 heads.
DenoiserConfig denoiser_preset(Variant variant, const Layout& layout, bool full_scale = false);

template <class T>
class Denoiser {
 public:
  explicit Denoiser(const DenoiserConfig& cfg);
  ~Denoiser();
  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;

  const DenoiserConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }

  // x [B, rows, T] (already projected), steps[b] in [0, N]. Returns the x0
  // prediction with the same shape.
  Var forward(Graph<T>& g, Var x, std::span<const int> steps) const;
  // Forward without building gradients.
  ArrayT<T> denoise(const ArrayT<T>& x, std::span<const int> steps) const;

  // Learned-routing gate weights per routed site for a horizon; empty under
  // direct routing or without experts.
  std::vector<std::vector<double>> routing_weights(int horizon) const;

 private:
  struct Net;
  DenoiserConfig cfg_;
  ParameterStore<T> store_;
  std::unique_ptr<Net> net_;
};

extern template class Denoiser<float>;
extern template class Denoiser<double>;

void save_denoiser(const std::string& path, const Denoiser<float>& model);
std::unique_ptr<Denoiser<float>> load_denoiser(const std::string& path);
Checkpoint denoiser_checkpoint(const Denoiser<float>& model);
std::unique_ptr<Denoiser<float>> denoiser_from_checkpoint(const Checkpoint& ckpt);

}  // namespace pdpp
