#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stainkit/image.hpp"
#include "stainkit/optim.hpp"
#include "stainkit/tensor.hpp"

namespace stainkit {

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t feature_channels = 64;  // d
  std::size_t codebook_size = 256;    // K
  std::size_t num_stain_blocks = 6;
  std::size_t heads = 4;
  float alpha = 0.25f;  // commitment weight of the codebook loss
  float w_contra_color = 1.0f;
  float w_contra_structure = 1.0f;
  float w_codebook = 1.0f;
  float w_recon = 1.0f;
  bool recon_both = true;        // reconstruct B as well as A each step
  bool codebook_restart = false;  // re-seed unused entries from encoder outputs
  std::uint64_t seed = 0;

  /// Throws Error when the configuration cannot describe a model.
  void validate() const;
  std::size_t grid() const { return image_size / 8; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class FeatureRole { kColor, kQuantizedColor, kStructure, kStained };

/// (B, d, h', w') feature tensor tagged with what produced it.
struct FeatureMap {
  Tensor tensor;
  FeatureRole role;
};

struct Codebook {
  Tensor entries;                      // [K, d]
  std::vector<std::uint64_t> usage;    // quantize hits per entry since reset

  std::size_t size() const { return entries.defined() ? entries.dim(0) : 0; }
  std::size_t dim() const { return entries.dim(1); }
  void reset_usage() { usage.assign(size(), 0); }
};

/// Index of the nearest entry (squared L2, lowest index on ties) for every row of tokens[n, d].
std::vector<std::uint32_t> nearest_entries(const Tensor& tokens, const Tensor& entries);

struct ConvLayer {
  Tensor weight;
  Tensor bias;
};

struct NormLayer {
  Tensor gamma;
  Tensor beta;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct EncoderWeights {
  bool normalize_input = false;  // instance-normalize the image first (structure encoder)
  ConvLayer stages[3];
  NormLayer norms[3];
  ConvLayer head;  // 1x1
};

struct AttentionWeights {
  Linear q, k, v, o;
};

struct StainBlockWeights {
  NormLayer norm1;
  AttentionWeights self_attn;
  NormLayer norm2;
  NormLayer norm_context;
  AttentionWeights cross_attn;
  NormLayer norm3;
  Linear fc1;  // d -> 4d
  Linear fc2;  // 4d -> d
};

struct DecoderWeights {
  ConvLayer stages[3];  // transposed, kernel 4, stride 2
  NormLayer norms[3];
  ConvLayer head;  // 3x3 to RGB
};

/// Multi-head scaled dot-product attention of query tokens (B, Tq, d) over
/// context tokens (B, Tk, d). When `weights_out` is given it receives the
/// softmax weights, shape (B·heads, Tq, Tk).
Tensor attention(const Tensor& query, const Tensor& context, const AttentionWeights& w, std::size_t heads,
                 Tensor* weights_out = nullptr);

/// One stain block over structure tokens x (B, T, d) and color tokens c (B, Tc, d).
Tensor stain_block_forward(const Tensor& x, const Tensor& color, const StainBlockWeights& w, std::size_t heads,
                           Tensor* self_weights = nullptr, Tensor* cross_weights = nullptr);

/// Zeroes both attention output projections and the second MLP layer, which
/// turns the block into the identity map.
void identity_init(StainBlockWeights& w);

class PidrModel {
 public:
  explicit PidrModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  FeatureMap encode_color(const Tensor& image) const;
  FeatureMap encode_structure(const Tensor& image) const;
  /// Straight-through quantization; increments the codebook usage counters.
  FeatureMap quantize(const FeatureMap& color);
  /// Same forward value, no usage bookkeeping; safe for concurrent inference.
  FeatureMap quantize_const(const FeatureMap& color) const;
  FeatureMap stain(const FeatureMap& structure, const FeatureMap& quantized) const;
  /// (B, 3, H, W) in [0, 1].
  Tensor decode(const FeatureMap& stained) const;

  /// D(SM(E_S(x), Z(E_C(x)))) without touching usage counters.
  Tensor reconstruct(const Tensor& image) const;
  /// D(SM(E_S(source), Z(E_C(color_source)))).
  Tensor restain(const Tensor& source, const Tensor& color_source) const;

  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }
  EncoderWeights& color_encoder() { return color_encoder_; }
  EncoderWeights& structure_encoder() { return structure_encoder_; }
  std::vector<StainBlockWeights>& stain_blocks() { return blocks_; }
  DecoderWeights& decoder() { return decoder_; }

  /// Every trainable tensor keyed by a dotted name, in lexicographic order.
  const std::map<std::string, Tensor>& named_parameters() const { return params_; }
  std::vector<Tensor> parameters() const;

  std::uint64_t steps_trained = 0;

 private:
  void check_image(const Tensor& image) const;
  Tensor& add(const std::string& name, Tensor t);

  ModelConfig config_;
  std::map<std::string, Tensor> params_;
  Codebook codebook_;
  EncoderWeights color_encoder_;
  EncoderWeights structure_encoder_;
  std::vector<StainBlockWeights> blocks_;
  DecoderWeights decoder_;
};

// Losses. Contrastive losses flatten their inputs before the cosine.

/// 1 − cos(fA, fA') + 1 + cos(fA, fB).
Tensor contrastive_color_loss(const Tensor& f_a, const Tensor& f_a_prime, const Tensor& f_b);
/// 1 − cos(fA, fA'').
Tensor contrastive_structure_loss(const Tensor& f_a, const Tensor& f_a_dprime);
/// mean_t ‖sg[f_t] − e_t‖ + α · mean_t ‖sg[e_t] − f_t‖, e_t the nearest entry.
Tensor codebook_loss(const Tensor& color_map, const Codebook& codebook, float alpha);
/// Mean squared error.
Tensor reconstruction_loss(const Tensor& reconstruction, const Tensor& image);

struct TrainingBatch {
  Tensor a;
  Tensor a_prime;   // color-preserving view of a
  Tensor a_dprime;  // structure-preserving view of a
  Tensor b;         // other color domain
};

TrainingBatch make_training_batch(const RgbImage& a, const RgbImage& b, std::uint64_t seed);

struct LossReport {
  float contrastive_color = 0.0f;
  float contrastive_structure = 0.0f;
  float codebook = 0.0f;
  float reconstruction_a = 0.0f;
  float reconstruction_b = 0.0f;
  float total = 0.0f;
};

/// Weighted sum of every loss term with a nonzero weight, recorded on the
/// active tape; fills `report` with the unweighted terms. Returns an
/// undefined tensor when every weight is zero. Counts codebook usage.
Tensor training_loss(PidrModel& model, const TrainingBatch& batch, LossReport& report);

/// One optimization step on all five components. Terms with a zero weight
/// stay out of the graph, so their parameters receive no update.
LossReport train_step(PidrModel& model, AdamW& optimizer, const TrainingBatch& batch);

struct TrainOptions {
  std::size_t steps = 500;
  AdamWOptions optimizer{};
  std::uint64_t seed = 0;
};

/// Runs `steps` train_step calls on seeded (A, B) draws from the two domains.
std::vector<LossReport> train(PidrModel& model, std::span<const RgbImage> domain_a,
                              std::span<const RgbImage> domain_b, const TrainOptions& options,
                              const std::function<void(std::size_t, const LossReport&)>& on_step = {});

/// Restains `source` with the color of `color_template`; both must match the configured size.
RgbImage normalize_image(const RgbImage& source, const RgbImage& color_template, const PidrModel& model);

}  // namespace stainkit
