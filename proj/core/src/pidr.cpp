#include "stainkit/pidr.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "stainkit/augment.hpp"
#include "stainkit/diagnostics.hpp"
#include "stainkit/ops.hpp"

namespace stainkit {

using namespace ops;

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error("invalid model config: " + what); };
  if (image_size == 0 || image_size % 8 != 0) fail("image_size must be a positive multiple of 8");
  if (feature_channels < 4 || feature_channels % 4 != 0) fail("feature_channels must be a positive multiple of 4");
  if (heads == 0 || feature_channels % heads != 0) fail("feature_channels must be divisible by heads");
  if (codebook_size == 0) fail("codebook_size must be positive");
  if (num_stain_blocks == 0) fail("num_stain_blocks must be positive");
  for (float w : {alpha, w_contra_color, w_contra_structure, w_codebook, w_recon}) {
    if (!std::isfinite(w) || w < 0.0f) fail("loss weights must be finite and nonnegative");
  }
}

std::vector<std::uint32_t> nearest_entries(const Tensor& tokens, const Tensor& entries) {
  if (entries.rank() != 2 || entries.dim(0) == 0) throw Error("quantize: empty codebook");
  if (tokens.rank() != 2 || tokens.dim(1) != entries.dim(1)) {
    throw Error("quantize: tokens " + shape_to_string(tokens.shape()) + " do not match codebook " +
                shape_to_string(entries.shape()));
  }
  const std::size_t n = tokens.dim(0), k = entries.dim(0), d = entries.dim(1);
  const auto t = tokens.data(), e = entries.data();
  std::vector<std::uint32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_j = 0;
    for (std::size_t j = 0; j < k; ++j) {
      double dist = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = static_cast<double>(t[i * d + c]) - static_cast<double>(e[j * d + c]);
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        best_j = static_cast<std::uint32_t>(j);
      }
    }
    out[i] = best_j;
  }
  return out;
}

namespace {

Tensor conv_layer(const Tensor& x, const ConvLayer& l, std::size_t stride, std::size_t padding) {
  return add_channel_bias(conv2d(x, l.weight, stride, padding), l.bias);
}

Tensor channel_norm(const Tensor& x, const NormLayer& n) {
  return tokens_to_map(layer_norm(map_to_tokens(x), n.gamma, n.beta), x.dim(2), x.dim(3));
}

Tensor linear(const Tensor& x, const Linear& l) {
  const std::size_t b = x.dim(0), t = x.dim(1), in = x.dim(2), out = l.weight.dim(1);
  Tensor y = add_bias(matmul(reshape(x, {b * t, in}), l.weight), l.bias);
  return reshape(y, {b, t, out});
}

Tensor norm_tokens(const Tensor& x, const NormLayer& n) { return layer_norm(x, n.gamma, n.beta); }

// (B, d, h, w) map -> [B·h·w, d] rows.
Tensor map_rows(const Tensor& map) {
  return reshape(map_to_tokens(map), {map.dim(0) * map.dim(2) * map.dim(3), map.dim(1)});
}

Tensor flat_tokens(const Tensor& map) { return map_to_tokens(map); }

void require_role(const FeatureMap& f, FeatureRole role, const char* what) {
  if (f.role != role) throw Error(std::string(what) + ": feature map has the wrong role");
}

}  // namespace

Tensor attention(const Tensor& query, const Tensor& context, const AttentionWeights& w, std::size_t heads,
                 Tensor* weights_out) {
  if (query.rank() != 3 || context.rank() != 3 || query.dim(0) != context.dim(0) || query.dim(2) != context.dim(2)) {
    throw Error("attention: query " + shape_to_string(query.shape()) + " incompatible with context " +
                shape_to_string(context.shape()));
  }
  const std::size_t dh = query.dim(2) / heads;
  Tensor q = split_heads(linear(query, w.q), heads);
  Tensor k = split_heads(linear(context, w.k), heads);
  Tensor v = split_heads(linear(context, w.v), heads);
  Tensor scores = scale(matmul(q, transpose_last(k)), 1.0f / std::sqrt(static_cast<float>(dh)));
  Tensor weights = softmax(scores, 2);
  if (weights_out) *weights_out = weights;
  return linear(merge_heads(matmul(weights, v), heads), w.o);
}

Tensor stain_block_forward(const Tensor& x, const Tensor& color, const StainBlockWeights& w, std::size_t heads,
                           Tensor* self_weights, Tensor* cross_weights) {
  if (x.rank() != 3 || color.rank() != 3 || x.dim(2) != color.dim(2) || x.dim(0) != color.dim(0)) {
    throw Error("stain block: structure tokens " + shape_to_string(x.shape()) + " incompatible with color tokens " +
                shape_to_string(color.shape()));
  }
  Tensor h = norm_tokens(x, w.norm1);
  Tensor x1 = ops::add(x, attention(h, h, w.self_attn, heads, self_weights));
  Tensor c = norm_tokens(color, w.norm_context);
  Tensor x2 = ops::add(x1, attention(norm_tokens(x1, w.norm2), c, w.cross_attn, heads, cross_weights));
  Tensor m = linear(gelu(linear(norm_tokens(x2, w.norm3), w.fc1)), w.fc2);
  return ops::add(x2, m);
}

void identity_init(StainBlockWeights& w) {
  for (Tensor* t : {&w.self_attn.o.weight, &w.self_attn.o.bias, &w.cross_attn.o.weight, &w.cross_attn.o.bias,
                    &w.fc2.weight, &w.fc2.bias}) {
    auto data = t->mutable_data();
    std::fill(data.begin(), data.end(), 0.0f);
  }
}

// ---------------------------------------------------------------------------

Tensor& PidrModel::add(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  auto [it, inserted] = params_.emplace(name, std::move(t));
  if (!inserted) throw Error("duplicate parameter name " + name);
  return it->second;
}

// Convolutions that feed a LayerNorm are scale-invariant, so their init scale
// only sets the effective step size of Adam relative to the weights. Starting
// at a tenth of the He scale lets the short desk-scale schedules make progress
// at the fixed learning rate.
constexpr double kPreNormInitGain = 0.1;

PidrModel::PidrModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const std::size_t d = config_.feature_channels;

  auto normal = [&](const Shape& shape, double stddev) {
    std::normal_distribution<float> dist(0.0f, static_cast<float>(stddev));
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(shape, std::move(v));
  };
  auto norm_layer = [&](const std::string& name, std::size_t n) {
    return NormLayer{add(name + ".gamma", Tensor::ones({n})), add(name + ".beta", Tensor::zeros({n}))};
  };
  auto linear_layer = [&](const std::string& name, std::size_t in, std::size_t out, double gain) {
    return Linear{add(name + ".weight", normal({in, out}, gain / std::sqrt(static_cast<double>(in)))),
                  add(name + ".bias", Tensor::zeros({out}))};
  };

  // Hidden widths never drop below 4 channels: a channel LayerNorm over a
  // single channel outputs a constant and cuts the gradient at small d.
  const std::size_t narrow = std::max<std::size_t>(d / 4, 4), mid = std::max<std::size_t>(d / 2, 4);
  const std::size_t widths[4] = {3, narrow, mid, d};
  auto encoder = [&](const std::string& prefix, bool normalize_input) {
    EncoderWeights e;
    e.normalize_input = normalize_input;
    for (std::size_t s = 0; s < 3; ++s) {
      const std::string name = prefix + ".stage" + std::to_string(s);
      const std::size_t in = widths[s], out = widths[s + 1];
      e.stages[s] = {add(name + ".weight", normal({out, in, 3, 3}, kPreNormInitGain * std::sqrt(2.0 / static_cast<double>(in * 9)))),
                     add(name + ".bias", Tensor::zeros({out}))};
      e.norms[s] = norm_layer(name + ".norm", out);
    }
    e.head = {add(prefix + ".head.weight", normal({d, d, 1, 1}, 1.0 / std::sqrt(static_cast<double>(d)))),
              add(prefix + ".head.bias", Tensor::zeros({d}))};
    return e;
  };
  color_encoder_ = encoder("color_encoder", false);
  structure_encoder_ = encoder("structure_encoder", true);

  {
    const std::size_t k = config_.codebook_size;
    const float bound = 1.0f / static_cast<float>(k);
    std::uniform_real_distribution<float> dist(-bound, bound);
    std::vector<float> v(k * d);
    for (auto& x : v) x = dist(rng);
    codebook_.entries = add("codebook.entries", Tensor::from({k, d}, std::move(v)));
    codebook_.reset_usage();
  }

  // Residual branches are scaled down with depth so the stack starts near the identity.
  const double branch_gain = 1.0 / std::sqrt(2.0 * static_cast<double>(config_.num_stain_blocks));
  for (std::size_t i = 0; i < config_.num_stain_blocks; ++i) {
    const std::string p = "stain_module.block" + std::to_string(i);
    StainBlockWeights b;
    auto attn = [&](const std::string& name) {
      return AttentionWeights{linear_layer(name + ".q", d, d, 1.0), linear_layer(name + ".k", d, d, 1.0),
                              linear_layer(name + ".v", d, d, 1.0), linear_layer(name + ".o", d, d, branch_gain)};
    };
    b.norm1 = norm_layer(p + ".norm1", d);
    b.self_attn = attn(p + ".self_attn");
    b.norm2 = norm_layer(p + ".norm2", d);
    b.norm_context = norm_layer(p + ".norm_context", d);
    b.cross_attn = attn(p + ".cross_attn");
    b.norm3 = norm_layer(p + ".norm3", d);
    b.fc1 = linear_layer(p + ".mlp.fc1", d, 4 * d, std::sqrt(2.0));
    b.fc2 = linear_layer(p + ".mlp.fc2", 4 * d, d, branch_gain);
    blocks_.push_back(std::move(b));
  }

  const std::size_t dec[4] = {d, mid, narrow, narrow};
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string name = "decoder.stage" + std::to_string(s);
    // Each output pixel of a stride-2, kernel-4 transposed conv sees 2x2 taps per input channel.
    decoder_.stages[s] = {
        add(name + ".weight", normal({dec[s], dec[s + 1], 4, 4}, kPreNormInitGain * std::sqrt(2.0 / static_cast<double>(dec[s] * 4)))),
        add(name + ".bias", Tensor::zeros({dec[s + 1]}))};
    decoder_.norms[s] = norm_layer(name + ".norm", dec[s + 1]);
  }
  decoder_.head = {add("decoder.head.weight", normal({3, dec[3], 3, 3}, 1.0 / std::sqrt(static_cast<double>(dec[3] * 9)))),
                   add("decoder.head.bias", Tensor::zeros({3}))};
}

std::vector<Tensor> PidrModel::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

void PidrModel::check_image(const Tensor& image) const {
  const std::size_t s = config_.image_size;
  if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != s || image.dim(3) != s) {
    throw Error("expected an image tensor (B,3," + std::to_string(s) + "," + std::to_string(s) + "), got " +
                shape_to_string(image.shape()));
  }
}

namespace {

Tensor run_encoder(const Tensor& image, const EncoderWeights& e) {
  Tensor x = e.normalize_input ? instance_norm(image) : image;
  for (std::size_t s = 0; s < 3; ++s) x = gelu(channel_norm(conv_layer(x, e.stages[s], 2, 1), e.norms[s]));
  return conv_layer(x, e.head, 1, 0);
}

}  // namespace

FeatureMap PidrModel::encode_color(const Tensor& image) const {
  check_image(image);
  return {run_encoder(image, color_encoder_), FeatureRole::kColor};
}

FeatureMap PidrModel::encode_structure(const Tensor& image) const {
  check_image(image);
  return {run_encoder(image, structure_encoder_), FeatureRole::kStructure};
}

FeatureMap PidrModel::quantize_const(const FeatureMap& color) const {
  require_role(color, FeatureRole::kColor, "quantize");
  const Tensor& f = color.tensor;
  Tensor rows = map_rows(f);
  const auto idx = nearest_entries(rows, codebook_.entries);
  Tensor q = straight_through_select(rows, codebook_.entries, idx);
  Tensor tokens = reshape(q, {f.dim(0), f.dim(2) * f.dim(3), f.dim(1)});
  return {tokens_to_map(tokens, f.dim(2), f.dim(3)), FeatureRole::kQuantizedColor};
}

FeatureMap PidrModel::quantize(const FeatureMap& color) {
  require_role(color, FeatureRole::kColor, "quantize");
  const Tensor& f = color.tensor;
  Tensor rows = map_rows(f);
  const auto idx = nearest_entries(rows, codebook_.entries);
  if (codebook_.usage.size() != codebook_.size()) codebook_.reset_usage();
  for (auto i : idx) ++codebook_.usage[i];
  Tensor q = straight_through_select(rows, codebook_.entries, idx);
  Tensor tokens = reshape(q, {f.dim(0), f.dim(2) * f.dim(3), f.dim(1)});
  return {tokens_to_map(tokens, f.dim(2), f.dim(3)), FeatureRole::kQuantizedColor};
}

FeatureMap PidrModel::stain(const FeatureMap& structure, const FeatureMap& quantized) const {
  require_role(structure, FeatureRole::kStructure, "stain");
  require_role(quantized, FeatureRole::kQuantizedColor, "stain");
  const Tensor& s = structure.tensor;
  if (s.rank() != 4 || s.dim(1) != config_.feature_channels) {
    throw Error("stain: structure map " + shape_to_string(s.shape()) + " does not have d channels");
  }
  Tensor x = flat_tokens(s);
  const Tensor c = flat_tokens(quantized.tensor);
  for (const auto& b : blocks_) x = stain_block_forward(x, c, b, config_.heads);
  return {tokens_to_map(x, s.dim(2), s.dim(3)), FeatureRole::kStained};
}

Tensor PidrModel::decode(const FeatureMap& stained) const {
  require_role(stained, FeatureRole::kStained, "decode");
  const Tensor& s = stained.tensor;
  if (s.rank() != 4 || s.dim(1) != config_.feature_channels) {
    throw Error("decode: expected (B," + std::to_string(config_.feature_channels) + ",h,w), got " +
                shape_to_string(s.shape()));
  }
  Tensor x = s;
  for (std::size_t i = 0; i < 3; ++i) {
    x = add_channel_bias(conv_transpose2d(x, decoder_.stages[i].weight, 2, 1), decoder_.stages[i].bias);
    x = gelu(channel_norm(x, decoder_.norms[i]));
  }
  return sigmoid(conv_layer(x, decoder_.head, 1, 1));
}

Tensor PidrModel::reconstruct(const Tensor& image) const { return restain(image, image); }

Tensor PidrModel::restain(const Tensor& source, const Tensor& color_source) const {
  return decode(stain(encode_structure(source), quantize_const(encode_color(color_source))));
}

// ---------------------------------------------------------------------------

Tensor contrastive_color_loss(const Tensor& f_a, const Tensor& f_a_prime, const Tensor& f_b) {
  // 1 − cos(a, a') + 1 + cos(a, b) = 2 − cos(a, a') + cos(a, b)
  Tensor positive = cosine_similarity(f_a, f_a_prime);
  Tensor negative = cosine_similarity(f_a, f_b);
  return add_scalar(sub(negative, positive), 2.0f);
}

Tensor contrastive_structure_loss(const Tensor& f_a, const Tensor& f_a_dprime) {
  return add_scalar(scale(cosine_similarity(f_a, f_a_dprime), -1.0f), 1.0f);
}

Tensor codebook_loss(const Tensor& color_map, const Codebook& codebook, float alpha) {
  if (color_map.rank() != 4) throw Error("codebook_loss: expected a (B,d,h,w) color map");
  Tensor rows = map_rows(color_map);
  const auto idx = nearest_entries(rows, codebook.entries);
  Tensor e = gather_rows(codebook.entries, idx);
  Tensor embed = mean(row_norms(sub(stop_gradient(rows), e)));
  Tensor commit = mean(row_norms(sub(stop_gradient(e), rows)));
  return add(embed, scale(commit, alpha));
}

Tensor reconstruction_loss(const Tensor& reconstruction, const Tensor& image) { return mse(reconstruction, image); }

TrainingBatch make_training_batch(const RgbImage& a, const RgbImage& b, std::uint64_t seed) {
  const Tensor ta = image_to_tensor(a);
  std::seed_seq seq{seed, std::uint64_t{0x5eed}};
  std::uint64_t seeds[2];
  {
    std::uint32_t raw[4];
    seq.generate(raw, raw + 4);
    seeds[0] = (std::uint64_t{raw[0]} << 32) | raw[1];
    seeds[1] = (std::uint64_t{raw[2]} << 32) | raw[3];
  }
  return {ta, augment_color_preserving(ta, seeds[0]), augment_structure_preserving(ta, seeds[1]),
          image_to_tensor(b)};
}

namespace {

void restart_dead_entries(Codebook& cb, const Tensor& color_map, std::mt19937_64& rng) {
  Tensor rows = map_rows(color_map);
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  auto entries = cb.entries.mutable_data();
  const auto src = rows.data();
  for (std::size_t j = 0; j < cb.size(); ++j) {
    if (cb.usage[j] != 0) continue;
    const std::size_t r = pick(rng);
    std::copy_n(src.begin() + r * d, d, entries.begin() + j * d);
  }
}

}  // namespace

Tensor training_loss(PidrModel& model, const TrainingBatch& batch, LossReport& report) {
  const ModelConfig& cfg = model.config();
  report = LossReport{};
  Tensor total;
  auto accumulate = [&](const Tensor& term, float weight) {
    if (weight == 0.0f) return;
    Tensor weighted = scale(term, weight);
    total = total.defined() ? add(total, weighted) : weighted;
  };

  const FeatureMap fa = model.encode_color(batch.a);
  const FeatureMap fb = model.encode_color(batch.b);
  if (cfg.w_contra_color != 0.0f) {
    const FeatureMap fa_prime = model.encode_color(batch.a_prime);
    Tensor loss = contrastive_color_loss(global_avg_pool(fa.tensor), global_avg_pool(fa_prime.tensor),
                                         global_avg_pool(fb.tensor));
    report.contrastive_color = loss.item();
    accumulate(loss, cfg.w_contra_color);
  }
  const FeatureMap sa = model.encode_structure(batch.a);
  if (cfg.w_contra_structure != 0.0f) {
    const FeatureMap sa_dprime = model.encode_structure(batch.a_dprime);
    Tensor loss = contrastive_structure_loss(global_avg_pool(sa.tensor), global_avg_pool(sa_dprime.tensor));
    report.contrastive_structure = loss.item();
    accumulate(loss, cfg.w_contra_structure);
  }
  if (cfg.w_codebook != 0.0f) {
    Tensor loss = scale(add(codebook_loss(fa.tensor, model.codebook(), cfg.alpha),
                            codebook_loss(fb.tensor, model.codebook(), cfg.alpha)),
                        0.5f);
    report.codebook = loss.item();
    accumulate(loss, cfg.w_codebook);
  }
  const FeatureMap qa = model.quantize(fa);
  const FeatureMap qb = model.quantize(fb);
  if (cfg.w_recon != 0.0f) {
    Tensor la = reconstruction_loss(model.decode(model.stain(sa, qa)), batch.a);
    report.reconstruction_a = la.item();
    accumulate(la, cfg.w_recon);
    if (cfg.recon_both) {
      const FeatureMap sb = model.encode_structure(batch.b);
      Tensor lb = reconstruction_loss(model.decode(model.stain(sb, qb)), batch.b);
      report.reconstruction_b = lb.item();
      accumulate(lb, cfg.w_recon);
    }
  }
  if (total.defined()) report.total = total.item();
  return total;
}

LossReport train_step(PidrModel& model, AdamW& optimizer, const TrainingBatch& batch) {
  const ModelConfig& cfg = model.config();
  auto params = model.parameters();
  for (auto& p : params) p.clear_grad();

  Tape tape;
  Tape::Scope scope(tape);
  LossReport report;
  const Tensor total = training_loss(model, batch, report);
  if (total.defined()) {
    if (!std::isfinite(report.total)) {
      std::ostringstream msg;
      msg << "non-finite training loss at step " << model.steps_trained << ": contrastive_color="
          << report.contrastive_color << " contrastive_structure=" << report.contrastive_structure
          << " codebook=" << report.codebook << " recon_a=" << report.reconstruction_a
          << " recon_b=" << report.reconstruction_b;
      throw Error(msg.str());
    }
    tape.backward(total);
  }
  optimizer.step(params);
  tape.clear();

  ++model.steps_trained;
  if (cfg.codebook_restart && model.steps_trained % 50 == 0) {
    // Re-encode A so the restart sees values from the updated encoder.
    std::mt19937_64 rng(cfg.seed ^ model.steps_trained);
    restart_dead_entries(model.codebook(), model.encode_color(batch.a).tensor.detach(), rng);
  }
  return report;
}

std::vector<LossReport> train(PidrModel& model, std::span<const RgbImage> domain_a,
                              std::span<const RgbImage> domain_b, const TrainOptions& options,
                              const std::function<void(std::size_t, const LossReport&)>& on_step) {
  if (domain_a.empty() || domain_b.empty()) throw Error("training needs at least one image per domain");
  AdamW optimizer(options.optimizer);
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick_a(0, domain_a.size() - 1), pick_b(0, domain_b.size() - 1);
  std::vector<LossReport> history;
  history.reserve(options.steps);
  for (std::size_t step = 0; step < options.steps; ++step) {
    const std::size_t ia = pick_a(rng), ib = pick_b(rng);
    const std::uint64_t aug_seed = rng();
    history.push_back(train_step(model, optimizer, make_training_batch(domain_a[ia], domain_b[ib], aug_seed)));
    if (on_step) on_step(step, history.back());
  }
  return history;
}

RgbImage normalize_image(const RgbImage& source, const RgbImage& color_template, const PidrModel& model) {
  const std::size_t s = model.config().image_size;
  if (source.width() != s || source.height() != s || color_template.width() != s || color_template.height() != s) {
    throw Error("normalize_image: images must be " + std::to_string(s) + "x" + std::to_string(s));
  }
  return tensor_to_image(model.restain(image_to_tensor(source), image_to_tensor(color_template)));
}

}  // namespace stainkit
